use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use tower::ServiceExt;

use vvs::service::{default_static_dir, router, SessionState};
use vvs_core::raster::{decode_image, encode_png};
use vvs_core::synth::{texture, weighted_centroid, MovingSquare, TwoLayerScene};
use vvs_core::{FlowField, Image};

fn state(img1: Image, img2: Image, f12: FlowField, f21: FlowField) -> Arc<SessionState> {
    Arc::new(SessionState { img1, img2, f12, f21, pair: "test-pair".into() })
}

fn square_app() -> Router {
    let scene = MovingSquare::default();
    let (a, b) = scene.images();
    let (f12, f21) = scene.flows();
    router(state(a, b, f12, f21), default_static_dir())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, String, Vec<u8>) {
    let res = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    let ctype = res.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned()).unwrap_or_default();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, body)
}

fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn meta_reports_dimensions() {
    let (status, ctype, body) = get(&square_app(), "/api/meta").await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.starts_with("application/json"));
    let v = json(&body);
    assert_eq!(v["width"], 96);
    assert_eq!(v["height"], 64);
    assert_eq!(v["pair"], "test-pair");
}

#[tokio::test]
async fn view_at_zero_is_image_one() {
    let (status, ctype, body) = get(&square_app(), "/api/view?a=0").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "image/png");
    assert_eq!(decode_image(&body).unwrap(), MovingSquare::default().images().0);
}

#[tokio::test]
async fn bad_parameters_are_json_400s() {
    let app = square_app();
    for (uri, code) in [
        ("/api/view?a=1.5", "out_of_range"),
        ("/api/view", "missing_parameter"),
        ("/api/view?a=abc", "invalid_parameter"),
        ("/api/closeup?a=0.5", "missing_parameter"),
        ("/api/closeup?a=0.5&z=0.5", "out_of_range"),
        ("/api/closeup?a=0.5&z=1.5&cx=2", "out_of_range"),
        ("/api/closeup?a=0.5&z=1.5&tau=x", "invalid_parameter"),
        ("/api/flow.png?dir=up", "invalid_parameter"),
    ] {
        let (status, ctype, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert!(ctype.starts_with("application/json"), "{uri}");
        let v = json(&body);
        assert_eq!(v["error"], code, "{uri}");
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let app = square_app();
    let first = get(&app, "/api/view?a=0.37").await.2;
    let second = get(&app, "/api/view?a=0.37").await.2;
    assert_eq!(first, second);
    let c1 = get(&app, "/api/closeup?a=0.5&z=1.4&cx=0.45").await;
    let c2 = get(&app, "/api/closeup?a=0.5&z=1.4&cx=0.45").await;
    assert_eq!(c1, c2);
}

#[tokio::test]
async fn views_move_with_a() {
    let app = square_app();
    let scene = MovingSquare::default();
    let x = |body: Vec<u8>| {
        let img = decode_image(&body).unwrap();
        vvs_core::synth::color_centroid(&img, scene.color, 8).unwrap()[0]
    };
    let (q, h) = (x(get(&app, "/api/view?a=0.25").await.2), x(get(&app, "/api/view?a=0.75").await.2));
    let base = scene.centroid()[0];
    assert!((q - (base + 3.0)).abs() <= 0.5 && (h - (base + 9.0)).abs() <= 0.5, "{q} {h}");
}

#[tokio::test]
async fn closeup_at_unit_zoom_equals_view() {
    let app = square_app();
    let view = get(&app, "/api/view?a=0.5").await;
    let close = get(&app, "/api/closeup?a=0.5&z=1").await;
    assert_eq!(close.0, StatusCode::OK);
    assert_eq!(view.2, close.2);
}

#[tokio::test]
async fn degenerate_segmentation_warns_with_image() {
    let img = texture(48, 40, 9);
    let zero = FlowField::zeros(48, 40);
    let app = router(state(img.clone(), img, zero.clone(), zero), default_static_dir());
    let (status, ctype, body) = get(&app, "/api/closeup?a=0.5&z=2").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(ctype.starts_with("application/json"));
    let v = json(&body);
    assert_eq!(v["warning"], true);
    assert_eq!(v["error"], "degenerate_segmentation");
    let png = base64::engine::general_purpose::STANDARD.decode(v["image_png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(decode_image(&png).unwrap().dims(), (48, 40));
}

#[tokio::test]
async fn closeup_shows_parallax() {
    let scene = TwoLayerScene::default();
    let img = scene.image();
    let mask = scene.mask();
    let f12 = FlowField::from_fn(scene.width, scene.height, |x, y| if mask.get(x, y) { [8.0, 0.0] } else { [2.0, 0.0] });
    let f21 = FlowField::from_fn(scene.width, scene.height, |x, y| {
        let [u, v] = f12.get(x, y);
        [-u, -v]
    });
    let app = router(state(img.clone(), img, f12, f21), default_static_dir());
    let (status, _, body) = get(&app, "/api/closeup?a=0&z=1.5&feather=0").await;
    assert_eq!(status, StatusCode::OK);
    let out = decode_image(&body).unwrap();
    let cx = scene.center()[0] as f64;
    let fg = weighted_centroid(&out, |c| c[0] as f64 - c[1] as f64).unwrap();
    let bg = weighted_centroid(&out, |c| c[2] as f64 - c[0] as f64).unwrap();
    assert!((fg[0] - cx - 30.0).abs() <= 0.5, "foreground at {}", fg[0] - cx);
    assert!((cx - bg[0] - 45.0).abs() <= 0.5, "background at {}", cx - bg[0]);
}

#[tokio::test]
async fn flow_visualizations() {
    let app = square_app();
    let (fwd_status, ctype, fwd) = get(&app, "/api/flow.png").await;
    assert_eq!(fwd_status, StatusCode::OK);
    assert_eq!(ctype, "image/png");
    let explicit = get(&app, "/api/flow.png?dir=fwd").await.2;
    assert_eq!(fwd, explicit);
    let back = get(&app, "/api/flow.png?dir=back").await;
    assert_eq!(back.0, StatusCode::OK);
    assert_ne!(back.2, fwd);
}

#[tokio::test]
async fn static_assets_are_served() {
    let app = square_app();
    let (status, ctype, body) = get(&app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.starts_with("text/html"));
    assert!(String::from_utf8(body).unwrap().contains("/api/view"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1);").unwrap();
    let scene = MovingSquare::default();
    let (a, b) = scene.images();
    let (f12, f21) = scene.flows();
    let custom = router(state(a, b, f12, f21), PathBuf::from(dir.path()));
    let (status, _, body) = get(&custom, "/app.js").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"console.log(1);");
    assert_eq!(get(&custom, "/missing.js").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_serial_ones() {
    let app = square_app();
    let uris: Vec<String> = (0..8)
        .map(|i| if i % 2 == 0 { format!("/api/view?a={}", i as f64 / 8.0) } else { format!("/api/closeup?a={}&z=1.3", i as f64 / 8.0) })
        .collect();
    let mut serial = Vec::new();
    for u in &uris {
        serial.push(get(&app, u).await);
    }
    let handles: Vec<_> = uris
        .iter()
        .cloned()
        .map(|u| {
            let app = app.clone();
            tokio::spawn(async move { get(&app, &u).await })
        })
        .collect();
    for (h, want) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), want);
    }
    // the PNG bytes are the core encoder's
    let img = MovingSquare::default().images().0;
    assert_eq!(get(&app, "/api/view?a=0").await.2, encode_png(&img));
}
