use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use langfield::eval::read_label_png;
use langfield::experiments::plane_region_labels;
use langfield::scene::synthetic_camera;
use langfield::{make_synthetic_scene, CameraSpec};
use langfield_cli::serve::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> axum::Router {
    router(make_synthetic_scene(3, 3000, 8, 16, 4).unwrap(), 8)
}

fn camera(size: u32) -> Value {
    serde_json::to_value(CameraSpec::from(&synthetic_camera(size, size))).unwrap()
}

async fn send(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn decode_png(v: &Value, field: &str) -> image::DynamicImage {
    image::load_from_memory(&B64.decode(v[field].as_str().unwrap()).unwrap()).unwrap()
}

#[tokio::test]
async fn healthz_and_meta() {
    let app = app();
    let (s, body) = send(&app, "GET", "/healthz", None).await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
    let (s, body) = send(&app, "GET", "/scene/meta", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!((v["k"].as_u64(), v["c"].as_u64(), v["n_primitives"].as_u64()), (Some(8), Some(16), Some(3000)));
    assert_eq!(v["terms"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn render_returns_pngs_of_camera_size() {
    let app = app();
    let body = json!({ "camera": camera(40) }).to_string();
    let (s, a) = send(&app, "POST", "/render", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(decode_png(&v, "rgb_png_b64").to_rgb8().dimensions(), (40, 40));
    let alpha = decode_png(&v, "alpha_png_b64").to_luma8();
    assert!(alpha.as_raw().iter().any(|&x| x > 200));
    let (_, b) = send(&app, "POST", "/render", Some(body)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn query_labels_match_region_layout() {
    let app = app();
    let meta: Value = serde_json::from_slice(&send(&app, "GET", "/scene/meta", None).await.1).unwrap();
    let term = meta["terms"][1].as_str().unwrap().to_string();
    let body = json!({ "camera": camera(48), "term": term }).to_string();
    let (s, a) = send(&app, "POST", "/query", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert!(v["max_similarity"].as_f64().unwrap() > 0.99);
    assert_eq!(decode_png(&v, "heatmap_png_b64").to_luma8().dimensions(), (48, 48));

    let labels = read_label_png(&B64.decode(v["labels_png_b64"].as_str().unwrap()).unwrap()).unwrap();
    let gt = plane_region_labels(&synthetic_camera(48, 48), 4);
    let (mut n, mut hit) = (0, 0);
    for (p, g) in labels.labels.iter().zip(&gt) {
        if let (Some(g), true) = (g, *p >= 0) {
            n += 1;
            hit += usize::from(*p as usize == *g);
        }
    }
    assert!(n > 1000, "{n}");
    assert!(hit as f64 / n as f64 > 0.95, "{hit}/{n}");

    let (_, b) = send(&app, "POST", "/query", Some(body)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn query_by_embedding_matches_term() {
    let app = app();
    let scene = make_synthetic_scene(3, 3000, 8, 16, 4).unwrap();
    let entry = scene.vocabulary.entries()[0].clone();
    let (_, a) = send(&app, "POST", "/query", Some(json!({ "camera": camera(24), "term": entry.term }).to_string())).await;
    let (_, b) = send(&app, "POST", "/query", Some(json!({ "camera": camera(24), "embedding": entry.embedding }).to_string())).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn bad_requests_are_400_json() {
    let app = app();
    let cases = [
        "{not json".to_string(),
        json!({ "camera": camera(16) }).to_string(),
        json!({ "camera": camera(16), "term": "unicorn" }).to_string(),
        json!({ "camera": camera(16), "embedding": [1.0, 2.0] }).to_string(),
        json!({ "camera": camera(16), "term": "x", "extra": 1 }).to_string(),
    ];
    for body in cases {
        let (s, resp) = send(&app, "POST", "/query", Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        let v: Value = serde_json::from_slice(&resp).unwrap();
        assert!(v["error"].is_string(), "{body}");
    }
    let mut cam = camera(16);
    cam["width"] = json!(0);
    let (s, _) = send(&app, "POST", "/render", Some(json!({ "camera": cam }).to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, resp) = send(&app, "POST", "/query", Some(json!({ "camera": camera(16), "term": "unicorn" }).to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let msg = serde_json::from_slice::<Value>(&resp).unwrap()["error"].as_str().unwrap().to_string();
    let scene = make_synthetic_scene(3, 3000, 8, 16, 4).unwrap();
    assert!(scene.vocabulary.terms().all(|t| msg.contains(t)), "{msg}");
}
