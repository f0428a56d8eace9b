use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use lsinspect::datamodel::{read_predictions, CSV_HEADER};
use lsinspect::synthgen::{generate_dataset, DatasetConfig};
use lsinspect_service::{router, AppState, ServiceConfig};

const BOUNDARY: &str = "lsinspect-test-boundary";

struct Harness {
    app: Router,
    _tmp: tempfile::TempDir,
}

fn harness(workers: usize) -> Harness {
    let tmp = tempfile::tempdir().unwrap();
    let state = AppState::new(ServiceConfig {
        data_root: tmp.path().join("data"),
        workers,
        ..Default::default()
    })
    .unwrap();
    Harness {
        app: router(state),
        _tmp: tmp,
    }
}

impl Harness {
    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Vec<u8>) {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn get_json(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b) = self.get(uri).await;
        (s, serde_json::from_slice(&b).unwrap())
    }

    async fn upload(&self, archive: &[u8]) -> (StatusCode, Value) {
        let mut body = Vec::new();
        write!(
            body,
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"archive\"; filename=\"ds.zip\"\r\nContent-Type: application/zip\r\n\r\n"
        )
        .unwrap();
        body.extend_from_slice(archive);
        write!(body, "\r\n--{BOUNDARY}--\r\n").unwrap();
        let req = Request::post("/api/datasets")
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(body))
            .unwrap();
        let (s, b) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap())
    }

    async fn post_job(&self, kind: &str, params: Value) -> (StatusCode, Value) {
        let req = Request::post("/api/jobs")
            .header("content-type", "application/json")
            .body(Body::from(json!({"kind": kind, "params": params}).to_string()))
            .unwrap();
        let (s, b) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap())
    }

    /// Poll until the job settles; asserts progress never goes backwards.
    async fn wait(&self, job_id: &str) -> Value {
        let mut last = 0;
        for _ in 0..2000 {
            let (s, v) = self.get_json(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(s, StatusCode::OK);
            let done = v["progress"]["done"].as_u64().unwrap();
            assert!(done >= last, "progress regressed from {last} to {done}");
            assert!(done <= v["progress"]["total"].as_u64().unwrap());
            last = done;
            match v["status"].as_str().unwrap() {
                "done" | "failed" => return v,
                _ => tokio::time::sleep(Duration::from_millis(10)).await,
            }
        }
        panic!("job {job_id} did not finish");
    }

    async fn run(&self, kind: &str, params: Value) -> Value {
        let (s, v) = self.post_job(kind, params).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let job = self.wait(v["job_id"].as_str().unwrap()).await;
        assert_eq!(job["status"], "done", "{job}");
        job
    }
}

fn zip_dir(root: &Path, with_annotations: bool) -> Vec<u8> {
    let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default();
    let mut sub = vec!["images"];
    if with_annotations {
        sub.push("annotations");
    }
    for dir in sub {
        let mut names: Vec<_> = std::fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for n in names {
            w.start_file(format!("{dir}/{n}"), opts).unwrap();
            w.write_all(&std::fs::read(root.join(dir).join(&n)).unwrap()).unwrap();
        }
    }
    w.start_file("manifest.json", opts).unwrap();
    w.write_all(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap();
    w.finish().unwrap().into_inner()
}

fn fixture(count: usize, seed: u64) -> (tempfile::TempDir, DatasetConfig) {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = DatasetConfig {
        count,
        seed,
        ..Default::default()
    };
    cfg.pattern.image_size = 256;
    generate_dataset(&cfg, tmp.path()).unwrap();
    (tmp, cfg)
}

fn zip_members(bytes: &[u8]) -> Vec<(String, Vec<u8>)> {
    let mut z = zip::ZipArchive::new(Cursor::new(bytes)).unwrap();
    (0..z.len())
        .map(|i| {
            let mut f = z.by_index(i).unwrap();
            let mut b = Vec::new();
            f.read_to_end(&mut b).unwrap();
            (f.name().to_string(), b)
        })
        .collect()
}

#[tokio::test]
async fn upload_lists_and_rejects() {
    let h = harness(2);
    let (tmp, _) = fixture(10, 1);
    let (s, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    assert_eq!(s, StatusCode::CREATED, "{ds}");
    assert_eq!(ds["image_count"], 10);
    assert_eq!(ds["has_ground_truth"], true);
    assert_eq!(ds["rejected"].as_array().unwrap().len(), 0);

    let id = ds["id"].as_str().unwrap();
    let (s, list) = h.get_json(&format!("/api/datasets/{id}/images")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list["images"].as_array().unwrap().len(), 10);

    // 9 images plus a text file
    let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default();
    for i in 0..9 {
        w.start_file(format!("img_{i}.png"), opts).unwrap();
        w.write_all(&std::fs::read(tmp.path().join(format!("images/img_{i:05}.png"))).unwrap())
            .unwrap();
    }
    w.start_file("notes.txt", opts).unwrap();
    w.write_all(b"operator notes").unwrap();
    let (s, ds2) = h.upload(&w.finish().unwrap().into_inner()).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(ds2["image_count"], 9);
    assert_eq!(ds2["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(ds2["has_ground_truth"], false);

    let (_, all) = h.get_json("/api/datasets").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
    assert_ne!(all[0]["id"], all[1]["id"]);
}

#[tokio::test]
async fn empty_archive_is_422() {
    let h = harness(1);
    let empty = zip::ZipWriter::new(Cursor::new(Vec::new())).finish().unwrap().into_inner();
    let (s, v) = h.upload(&empty).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"]["code"].is_string());
    assert!(v["error"]["message"].is_string());
}

#[tokio::test]
async fn unknown_references_and_bad_params() {
    let h = harness(1);
    let (s, v) = h.post_job("detect", json!({"dataset": "ds-999999"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");

    let (s, v) = h.get_json("/api/jobs/job-424242").await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{v}");
    let (s, _) = h.get("/api/artifacts/deadbeef").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (tmp, _) = fixture(2, 3);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap();
    let (s, v) = h.post_job("detect", json!({"dataset": id, "intensity_threshold": 2.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"], json!(["intensity_threshold"]));
    let (s, v) = h.post_job("detect", json!({"dataset": id, "colour": "red"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"], json!(["colour"]));
    let (s, v) = h.post_job("sharpen", json!({})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"], json!(["kind"]));
}

#[tokio::test]
async fn detect_is_content_addressed() {
    let h = harness(2);
    let (tmp, _) = fixture(10, 5);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap();

    let a = h.run("detect", json!({"dataset": id})).await;
    assert_eq!(a["progress"], json!({"done": 10, "total": 10}));
    let b = h.run("detect", json!({"dataset": id})).await;
    assert_ne!(a["id"], b["id"]);
    assert_eq!(a["result"]["artifact"], b["result"]["artifact"]);

    let (s, bytes) = h.get(a["result"]["url"].as_str().unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let set = read_predictions(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(set.images.len(), 10);
    assert!(set.detection_count() > 0);
}

#[tokio::test]
async fn ensemble_evaluate_export_segregate() {
    let h = harness(2);
    let (tmp, _) = fixture(6, 8);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap();

    let m1 = h.run("detect", json!({"dataset": id, "model": "m1"})).await;
    let m2 = h
        .run("detect", json!({"dataset": id, "model": "m2", "intensity_threshold": 0.45, "min_size": 6}))
        .await;
    let (a1, a2) = (m1["result"]["artifact"].as_str().unwrap(), m2["result"]["artifact"].as_str().unwrap());

    let (s, v) = h.post_job("ensemble", json!({"predictions": [a1]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"], json!(["predictions"]));
    h.run("ensemble", json!({"predictions": [a1], "allow_single": true})).await;

    let ens = h.run("ensemble", json!({"predictions": [a1, a2], "order": ["m1", "m2"]})).await;
    let (_, bytes) = h.get(ens["result"]["url"].as_str().unwrap()).await;
    let merged = read_predictions(std::str::from_utf8(&bytes).unwrap()).unwrap();
    let (_, b1) = h.get(&format!("/api/artifacts/{a1}")).await;
    let first = read_predictions(std::str::from_utf8(&b1).unwrap()).unwrap();
    assert!(merged.detection_count() >= first.detection_count());
    assert!(merged.images.iter().flat_map(|i| &i.detections).any(|d| d.source == "m1"));

    let ev = h.run("evaluate", json!({"dataset": id, "predictions": a1, "score_threshold": 0.0})).await;
    let (_, report) = h.get_json(ev["result"]["url"].as_str().unwrap()).await;
    let map = report["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert_eq!(report["per_class"].as_object().unwrap().len(), 5);

    let csv = h.run("export_csv", json!({"predictions": a1, "score_threshold": 0.5})).await;
    let (s, body) = h.get(csv["result"]["url"].as_str().unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let visible = first.images.iter().flat_map(|i| &i.detections).filter(|d| d.score >= 0.5).count();
    assert_eq!(text.lines().count() - 1, visible);

    let seg = h.run("segregate", json!({"dataset": id, "predictions": a1, "score_threshold": 0.5})).await;
    let (_, zipped) = h.get(seg["result"]["url"].as_str().unwrap()).await;
    let members = zip_members(&zipped);
    let plan: Value = serde_json::from_slice(&members.iter().find(|(n, _)| n == "plan.json").unwrap().1).unwrap();
    for (folder, ids) in plan["folders"].as_object().unwrap() {
        let in_zip = members.iter().filter(|(n, _)| n.starts_with(&format!("{folder}/"))).count();
        assert_eq!(in_zip, ids.as_array().unwrap().len());
    }
    let seg2 = h.run("segregate", json!({"dataset": id, "predictions": a1, "score_threshold": 0.5})).await;
    assert_eq!(seg["result"]["artifact"], seg2["result"]["artifact"]);
}

#[tokio::test]
async fn evaluate_without_truth_is_422() {
    let h = harness(1);
    let (tmp, _) = fixture(3, 2);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), false)).await;
    assert_eq!(ds["has_ground_truth"], false);
    let id = ds["id"].as_str().unwrap();
    let det = h.run("detect", json!({"dataset": id})).await;
    let (s, v) = h
        .post_job("evaluate", json!({"dataset": id, "predictions": det["result"]["artifact"]}))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "no_ground_truth");
}

#[tokio::test]
async fn denoise_registers_derived_dataset() {
    let h = harness(2);
    let (tmp, _) = fixture(4, 11);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap();
    let job = h.run("denoise", json!({"dataset": id, "method": "gaussian", "param": 1.0})).await;
    let derived = job["result"]["dataset"].as_str().unwrap();
    let (s, handle) = h.get_json(&format!("/api/datasets/{derived}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(handle["image_count"], 4);
    assert_eq!(handle["derived_from"], id);
    assert_eq!(handle["has_ground_truth"], true);
    let (_, zipped) = h.get(job["result"]["url"].as_str().unwrap()).await;
    assert_eq!(zip_members(&zipped).len(), 4);
    h.run("detect", json!({"dataset": derived})).await;

    let (s, v) = h.post_job("denoise", json!({"dataset": id, "method": "wavelet"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
}

#[tokio::test]
async fn overlay_filters_by_threshold() {
    let h = harness(1);
    let (tmp, _) = fixture(10, 21);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap();
    let job = h.run("detect", json!({"dataset": id})).await;
    let art = job["result"]["artifact"].as_str().unwrap();
    let (_, bytes) = h.get(&format!("/api/artifacts/{art}")).await;
    let set = read_predictions(std::str::from_utf8(&bytes).unwrap()).unwrap();

    let uri = |image: &str, t: f64| format!("/api/overlay?dataset={id}&image={image}&pred={art}&min_score={t}");
    let with_boxes = set.images.iter().find(|i| !i.detections.is_empty()).unwrap();
    let (s, png) = h.get(&uri(&with_boxes.image_id, 0.0)).await;
    assert_eq!(s, StatusCode::OK);
    let drawn = image::load_from_memory(&png).unwrap();
    assert_eq!(drawn.color(), image::ColorType::Rgb8);
    let (_, again) = h.get(&uri(&with_boxes.image_id, 0.0)).await;
    assert_eq!(png, again);

    // Above every score: the original image comes back.
    let (_, plain) = h.get(&uri(&with_boxes.image_id, 1.0)).await;
    let max_score = with_boxes.detections.iter().map(|d| d.score).fold(0.0, f64::max);
    let original = image::open(tmp.path().join("images").join(&with_boxes.image_id)).unwrap().to_luma8();
    if max_score < 1.0 {
        assert_eq!(image::load_from_memory(&plain).unwrap().to_luma8(), original);
    }

    // A weak box is drawn at a low threshold and hidden at a higher one.
    if let Some((img, weak)) = set
        .images
        .iter()
        .flat_map(|i| i.detections.iter().map(move |d| (i, d)))
        .find(|(_, d)| d.score < 0.5)
    {
        let (_, low) = h.get(&uri(&img.image_id, weak.score)).await;
        let (_, high) = h.get(&uri(&img.image_id, 0.5)).await;
        assert_ne!(low, high);
    }

    let (s, v) = h.get_json(&uri("missing.png", 0.5)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_jobs_all_finish() {
    let h = harness(2);
    let (tmp, _) = fixture(6, 13);
    let (_, ds) = h.upload(&zip_dir(tmp.path(), true)).await;
    let id = ds["id"].as_str().unwrap().to_string();
    let mut ids = Vec::new();
    for t in [0.45, 0.5, 0.55, 0.5] {
        let (s, v) = h.post_job("detect", json!({"dataset": id, "intensity_threshold": t})).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        ids.push(v["job_id"].as_str().unwrap().to_string());
    }
    let mut artifacts = Vec::new();
    for j in &ids {
        let v = h.wait(j).await;
        assert_eq!(v["status"], "done");
        artifacts.push(v["result"]["artifact"].clone());
    }
    assert_eq!(artifacts[1], artifacts[3]);
    let (_, jobs) = h.get_json("/api/jobs").await;
    assert_eq!(jobs.as_array().unwrap().len(), 4);
}
