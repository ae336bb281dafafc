use std::io::Cursor;
use std::path::{Path, PathBuf};

use canopy_cli::server::{load_state, router, serve_on, AppState, ServeConfig, DEFAULT_MAX_UPLOAD};
use canopy_cli::seeded_bundle;
use canopy_core::recognizer::{Recognizer, SpeciesCatalog};
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use reqwest::StatusCode;
use serde_json::Value;

const CATALOG: &str = include_str!("../../../assets/catalog.json");
const SPECIES: [&str; 6] = ["cypress", "locust", "pine", "sycamore", "ginkgo", "magnolia"];

fn png(w: u32, h: u32, seed: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x as u8).wrapping_mul(seed), (y * 3) as u8, seed]));
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img).write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

fn noisy_png(w: u32, h: u32) -> Vec<u8> {
    let mut state = 0x9e37_79b9_u32;
    let img = RgbImage::from_fn(w, h, |_, _| {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        let [a, b, c, _] = state.to_le_bytes();
        Rgb([a, b, c])
    });
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img).write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

struct Server {
    base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<anyhow::Result<()>>>,
}

impl Server {
    async fn start(state: AppState, cors: &str, static_dir: Option<PathBuf>) -> Server {
        let app = router(state, cors, static_dir).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(serve_on(listener, app, async {
            let _ = stopped.await;
        }));
        Server {
            base,
            stop: Some(stop),
            handle: Some(handle),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn shutdown(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.take().unwrap().await.unwrap().unwrap();
    }
}

fn state(max_upload: usize) -> AppState {
    let bundle = seeded_bundle(&SPECIES, 5).unwrap();
    let recognizer = Recognizer::new(bundle.graph, bundle.labels, SpeciesCatalog::parse(CATALOG).unwrap()).unwrap();
    AppState::new(recognizer, max_upload)
}

async fn body_json(resp: reqwest::Response) -> Value {
    serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap()
}

async fn error_code(resp: reqwest::Response) -> (StatusCode, String) {
    let status = resp.status();
    let body = body_json(resp).await;
    assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
    (status, body["error"]["code"].as_str().unwrap().to_string())
}

fn multipart(field: &str, bytes: &[u8]) -> (String, Vec<u8>) {
    let boundary = "canopy-test-boundary-7f3a";
    let mut body = Vec::new();
    body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"note\"\r\n\r\nhello\r\n").as_bytes());
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"tree.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

#[tokio::test]
async fn health_and_species_endpoints() {
    let server = Server::start(state(DEFAULT_MAX_UPLOAD), "*", None).await;
    let client = reqwest::Client::new();

    let health = body_json(client.get(server.url("/healthz")).send().await.unwrap()).await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["model"]["name"], "mini-inception");
    assert_eq!(health["model"]["version"], "1");
    assert_eq!(health["model"]["num_classes"], 6);
    assert_eq!(health["model"]["labels"][0], "cypress");

    let species = body_json(client.get(server.url("/api/species")).send().await.unwrap()).await;
    let list = species["species"].as_array().unwrap();
    assert_eq!(list.len(), 6);
    assert!(list.iter().all(|s| s["recognized"] == true));
    assert_eq!(list[1]["label"], "ginkgo");
    assert_eq!(list[1]["display_name"], "Ginkgo");

    let missing = client.get(server.url("/api/nothing")).send().await.unwrap();
    assert_eq!(error_code(missing).await, (StatusCode::NOT_FOUND, "not_found".into()));
    server.shutdown().await;
}

#[tokio::test]
async fn classify_raw_and_multipart_agree() {
    let server = Server::start(state(DEFAULT_MAX_UPLOAD), "*", None).await;
    let client = reqwest::Client::new();
    let image = png(120, 90, 17);

    let raw = client
        .post(server.url("/api/classify"))
        .header("content-type", "image/png")
        .body(image.clone())
        .send()
        .await
        .unwrap();
    assert_eq!(raw.status(), StatusCode::OK);
    assert_eq!(raw.headers()["content-type"], "application/json");
    let raw = body_json(raw).await;
    assert_eq!(raw["predictions"].as_array().unwrap().len(), 3);

    let (content_type, body) = multipart("image", &image);
    let form = client
        .post(server.url("/api/classify"))
        .header("content-type", content_type)
        .body(body)
        .send()
        .await
        .unwrap();
    assert_eq!(form.status(), StatusCode::OK);
    assert_eq!(body_json(form).await, raw);

    let all = body_json(
        client
            .post(server.url("/api/classify?k=50"))
            .body(image.clone())
            .send()
            .await
            .unwrap(),
    )
    .await;
    let preds = all["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 6);
    let sum: f64 = preds.iter().map(|p| p["probability"].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-6);
    assert_eq!(preds[0], raw["predictions"][0]);
    server.shutdown().await;
}

#[tokio::test]
async fn client_errors_carry_codes() {
    let server = Server::start(state(DEFAULT_MAX_UPLOAD), "*", None).await;
    let client = reqwest::Client::new();
    let url = server.url("/api/classify");
    let image = png(8, 8, 3);

    let cases: Vec<(reqwest::RequestBuilder, StatusCode, &str)> = vec![
        (client.post(&url).body(b"not an image".to_vec()), StatusCode::UNPROCESSABLE_ENTITY, "undecodable_image"),
        (client.post(&url), StatusCode::BAD_REQUEST, "empty_body"),
        (client.post(format!("{url}?k=0")).body(image.clone()), StatusCode::BAD_REQUEST, "invalid_k"),
        (client.post(format!("{url}?k=two")).body(image.clone()), StatusCode::BAD_REQUEST, "invalid_k"),
        {
            let (ct, body) = multipart("photo", &image);
            (client.post(&url).header("content-type", ct).body(body), StatusCode::BAD_REQUEST, "missing_image")
        },
        (
            client.post(&url).header("content-type", "multipart/form-data; boundary=x").body("garbage"),
            StatusCode::BAD_REQUEST,
            "invalid_multipart",
        ),
    ];
    for (request, status, code) in cases {
        let resp = request.send().await.unwrap();
        assert_eq!(error_code(resp).await, (status, code.to_string()));
    }
    let wrong_method = client.get(&url).send().await.unwrap();
    assert_eq!(wrong_method.status(), StatusCode::METHOD_NOT_ALLOWED);
    server.shutdown().await;
}

#[tokio::test]
async fn oversized_uploads_get_413_json() {
    let server = Server::start(state(2_000), "*", None).await;
    let client = reqwest::Client::new();
    let big = noisy_png(200, 200);
    assert!(big.len() > 2_000);
    let resp = client.post(server.url("/api/classify")).body(big.clone()).send().await.unwrap();
    assert_eq!(error_code(resp).await, (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large".into()));

    let (ct, body) = multipart("image", &big);
    let resp = client
        .post(server.url("/api/classify"))
        .header("content-type", ct)
        .body(body)
        .send()
        .await
        .unwrap();
    assert_eq!(error_code(resp).await, (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large".into()));

    let small = png(8, 8, 1);
    assert!(small.len() < 2_000);
    let ok = client.post(server.url("/api/classify")).body(small).send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    server.shutdown().await;
}

#[tokio::test]
async fn cors_headers_follow_configuration() {
    let client = reqwest::Client::new();
    let any = Server::start(state(DEFAULT_MAX_UPLOAD), "*", None).await;
    let resp = client
        .get(any.url("/healthz"))
        .header("origin", "http://ui.example")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    any.shutdown().await;

    let one = Server::start(state(DEFAULT_MAX_UPLOAD), "http://ui.example", None).await;
    let allowed = client
        .request(reqwest::Method::OPTIONS, one.url("/api/classify"))
        .header("origin", "http://ui.example")
        .header("access-control-request-method", "POST")
        .send()
        .await
        .unwrap();
    assert_eq!(allowed.headers()["access-control-allow-origin"], "http://ui.example");
    let other = client
        .get(one.url("/healthz"))
        .header("origin", "http://elsewhere.example")
        .send()
        .await
        .unwrap();
    assert!(other.headers().get("access-control-allow-origin").is_none());
    one.shutdown().await;
}

#[tokio::test]
async fn static_ui_is_served_alongside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>field guide</h1>").unwrap();
    let server = Server::start(state(DEFAULT_MAX_UPLOAD), "*", Some(dir.path().to_path_buf())).await;
    let client = reqwest::Client::new();
    let page = client.get(server.url("/index.html")).send().await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert_eq!(page.text().await.unwrap(), "<h1>field guide</h1>");
    let root = client.get(server.url("/")).send().await.unwrap();
    assert_eq!(root.status(), StatusCode::OK);
    let health = client.get(server.url("/healthz")).send().await.unwrap();
    assert_eq!(health.status(), StatusCode::OK);
    server.shutdown().await;
}

fn resident_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmRSS:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

#[tokio::test]
async fn memory_is_stable_over_many_sequential_requests() {
    let server = Server::start(state(DEFAULT_MAX_UPLOAD), "*", None).await;
    let client = reqwest::Client::new();
    let image = png(64, 64, 5);
    let mut first = None;
    let mut baseline = None;
    for i in 0..1_100 {
        let resp = client.post(server.url("/api/classify")).body(image.clone()).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let body = resp.bytes().await.unwrap();
        match &first {
            None => first = Some(body),
            Some(f) => assert_eq!(&body, f),
        }
        // The first hundred requests warm allocator pools and worker threads.
        if i == 99 {
            baseline = resident_kib();
        }
    }
    if let (Some(baseline), Some(now)) = (baseline, resident_kib()) {
        assert!(now < baseline + 32 * 1024, "resident set grew from {baseline} KiB to {now} KiB");
    }
    server.shutdown().await;
}

#[test]
fn startup_fails_with_a_described_cause() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.trmb");
    std::fs::write(&model, seeded_bundle(&SPECIES, 1).unwrap().to_bytes()).unwrap();
    let catalog = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/catalog.json");
    let config = |model: &Path, catalog: &Path| ServeConfig {
        model: model.to_path_buf(),
        catalog: catalog.to_path_buf(),
        listen: "127.0.0.1:0".parse().unwrap(),
        max_upload_bytes: DEFAULT_MAX_UPLOAD,
        cors_origin: "*".into(),
        static_dir: None,
    };
    assert!(load_state(&config(&model, &catalog)).is_ok());
    let err = load_state(&config(&dir.path().join("none.trmb"), &catalog)).err().unwrap();
    assert!(err.to_string().contains("none.trmb"), "{err}");
    let err = load_state(&config(&model, &dir.path().join("none.json"))).err().unwrap();
    assert!(err.to_string().contains("catalog"), "{err}");
    let bad_catalog = dir.path().join("bad.json");
    std::fs::write(&bad_catalog, "{\"pine\": 3}").unwrap();
    assert!(load_state(&config(&model, &bad_catalog)).is_err());
    let corrupt = dir.path().join("corrupt.trmb");
    std::fs::write(&corrupt, b"TRMBxxxx").unwrap();
    assert!(load_state(&config(&corrupt, &catalog)).is_err());
}
