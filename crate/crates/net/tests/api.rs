use std::sync::Arc;
use std::thread::sleep;
use std::time::{Duration, Instant};

use openchamber_core::control::live::{spawn, ControlHandle, Pacing};
use openchamber_core::control::{Chamber, Controller, ControllerConfig};
use openchamber_core::datastore::Store;
use openchamber_core::recipe::{parse_recipe, SAMPLE_RECIPE_JSON};
use openchamber_net::{api_router, finish_router, ApiState, Server, ERROR_CODES};
use serde_json::{json, Value};

const SAMPLE_ID: &str = "7ca3134e91aec96acd17a74764000bb8";

struct Live {
    server: Option<Server>,
    control: ControlHandle,
    store: Arc<Store>,
    agent: ureq::Agent,
    token: Option<String>,
}

impl Drop for Live {
    fn drop(&mut self) {
        drop(self.server.take());
        self.control.shutdown();
    }
}

fn live(pacing: Pacing, token: Option<&str>) -> Live {
    let chamber = Chamber::from_preset("default_desktop", 7).unwrap();
    let ctl = Controller::new(chamber, ControllerConfig::default()).unwrap();
    let store = Arc::new(Store::in_memory());
    let (control, _join) = spawn(ctl, store.clone(), pacing);
    let router = finish_router(api_router(ApiState::new(control.clone(), store.clone())), token.map(Into::into));
    let server = Server::start(router, "127.0.0.1:0").unwrap();
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
    Live { server: Some(server), control, store, agent, token: token.map(Into::into) }
}

struct Reply {
    status: u16,
    headers: ureq::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    /// Asserts an error reply with a documented code.
    fn error(&self, status: u16, code: &str) {
        assert_eq!(self.status, status, "{}", String::from_utf8_lossy(&self.body));
        let v = self.json();
        assert_eq!(v["code"], code);
        assert_eq!(v["status"], status);
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
        assert!(ERROR_CODES.contains(&code));
    }
}

impl Live {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.as_ref().unwrap().url())
    }

    fn send(&self, method: &str, path: &str, body: Option<&[u8]>) -> Reply {
        let mut req = ureq::http::Request::builder().method(method).uri(self.url(path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        if body.is_some() {
            req = req.header("Content-Type", "application/json");
        }
        let resp = self.agent.run(req.body(body.unwrap_or_default().to_vec()).unwrap()).unwrap();
        let status = resp.status().as_u16();
        let headers = resp.headers().clone();
        let body = resp.into_body().read_to_vec().unwrap();
        Reply { status, headers, body }
    }

    fn get(&self, path: &str) -> Reply {
        self.send("GET", path, None)
    }

    fn post(&self, path: &str, body: &Value) -> Reply {
        self.send("POST", path, Some(&serde_json::to_vec(body).unwrap()))
    }

    fn wait_for(&self, what: &str, mut done: impl FnMut(&Value) -> bool) -> Value {
        let start = Instant::now();
        loop {
            let state = self.get("/state").json();
            if done(&state) {
                return state;
            }
            assert!(start.elapsed() < Duration::from_secs(120), "timed out waiting for {what}: {state}");
            sleep(Duration::from_millis(20));
        }
    }
}

fn short_recipe(id: &str, hours: u64) -> Value {
    json!({
        "_id": id,
        "format": "simple",
        "operations": [
            [0, "air_temperature", 24],
            [hours * 3600, "air_temperature", 24],
        ],
    })
}

#[test]
fn recipes_round_trip_and_errors_are_typed() {
    let api = live(Pacing::Speed(10.0), None);
    let r = api.send("POST", "/recipes", Some(SAMPLE_RECIPE_JSON.as_bytes()));
    assert_eq!(r.status, 201);
    assert_eq!(r.json()["id"], SAMPLE_ID);
    assert_eq!(r.json()["revision"], 1);
    // same document again changes nothing
    let again = api.send("POST", "/recipes", Some(SAMPLE_RECIPE_JSON.as_bytes()));
    assert_eq!((again.status, again.json()["revision"].clone()), (200, json!(1)));

    let list = api.get("/recipes").json();
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["id"], SAMPLE_ID);
    assert_eq!(list[0]["duration"], 172800);

    let got = api.get(&format!("/recipes/{SAMPLE_ID}"));
    assert_eq!(got.status, 200);
    let sample: Value = serde_json::from_str(SAMPLE_RECIPE_JSON).unwrap();
    assert_eq!(parse_recipe(&got.body).unwrap(), parse_recipe(SAMPLE_RECIPE_JSON.as_bytes()).unwrap());
    api.get("/recipes/nope").error(404, "unknown_recipe");

    let cases: [(&[u8], &str); 5] = [
        (b"{", "malformed_json"),
        (br#"{"_id":"x","format":"simple","operations":[]}"#, "empty_operations"),
        (br#"{"_id":"x","format":"fancy","operations":[[0,"air_temperature",20]]}"#, "unknown_format"),
        (br#"{"_id":"x","format":"simple","operations":[[0,"soil",20]]}"#, "unknown_variable"),
        (
            br#"{"_id":"x","format":"simple","operations":[[10,"air_temperature",20],[0,"air_temperature",21]]}"#,
            "unsorted_offsets",
        ),
    ];
    for (body, code) in cases {
        api.send("POST", "/recipes", Some(body)).error(400, code);
    }
    // a changed body is a new revision
    let mut edited = sample.clone();
    edited["operations"][0][2] = json!(23);
    let r = api.post("/recipes", &edited);
    assert_eq!((r.status, r.json()["revision"].clone()), (200, json!(2)));
    assert_eq!(api.get("/recipes").json().as_array().unwrap().len(), 1);
}

#[test]
fn manual_dose_is_accepted_and_logged() {
    let api = live(Pacing::Speed(1000.0), None);
    let r = api.post("/actuate", &json!({"effect": "dose_ph_up", "magnitude": 20}));
    assert_eq!(r.status, 202, "{}", r.json());
    assert_eq!(r.json()["effect"], "dose_ph_up");
    let state = api.wait_for("the dose in the log", |s| {
        s["recent_actuations"]
            .as_array()
            .is_some_and(|a| a.iter().any(|x| x["effect"] == "dose_ph_up" && x["magnitude"] == 20.0))
    });
    let log = state["recent_actuations"].as_array().unwrap();
    let doses: Vec<_> = log.iter().filter(|x| x["effect"] == "dose_ph_up").collect();
    assert_eq!(doses.len(), 1);
    assert_eq!(doses[0]["source"], "manual");

    api.post("/actuate", &json!({"effect": "spray", "magnitude": 1})).error(400, "unknown_effect");
    api.post("/actuate", &json!({"effect": "heat", "magnitude": 2})).error(400, "out_of_domain");
    api.post("/actuate", &json!({"effect": "heat"})).error(400, "bad_request");
    api.send("POST", "/actuate", Some(b"not json")).error(400, "bad_request");
}

#[test]
fn run_lifecycle_conflicts() {
    let api = live(Pacing::Speed(10.0), None);
    api.get("/telemetry").error(404, "unknown_run");
    api.post("/runs", &json!({"recipe_id": SAMPLE_ID})).error(404, "unknown_recipe");
    api.post("/runs", &json!({})).error(400, "bad_request");
    api.post("/runs/current/abort", &json!({})).error(409, "no_active_run");
    assert_eq!(api.get("/state").json()["phase"], "idle");

    assert_eq!(api.send("POST", "/recipes", Some(SAMPLE_RECIPE_JSON.as_bytes())).status, 201);
    let started = api.post("/runs", &json!({"recipe_id": SAMPLE_ID}));
    assert_eq!(started.status, 201);
    let run_id = started.json()["run_id"].as_str().unwrap().to_string();
    assert!(run_id.contains(SAMPLE_ID));

    api.post("/runs", &json!({"recipe_id": SAMPLE_ID})).error(409, "run_active");
    api.post("/actuate", &json!({"effect": "heat", "magnitude": 0.5, "duration_s": 30}))
        .error(409, "actuation_during_run");
    let forced = api.post("/actuate", &json!({"effect": "heat", "magnitude": 0.5, "duration_s": 30, "override": true}));
    assert_eq!(forced.status, 202);

    let state = api.wait_for("the run to be visible", |s| s["run"]["run_id"] == run_id.as_str());
    assert_eq!(state["phase"], "running");
    assert_eq!(state["run"]["duration"], 172800);
    assert_eq!(state["desired"]["air_temperature"], 25.0);

    let aborted = api.post("/runs/current/abort", &json!({}));
    assert_eq!(aborted.status, 200);
    assert_eq!(aborted.json()["run_id"], run_id.as_str());
    api.post("/runs/current/abort", &json!({})).error(409, "no_active_run");
    api.wait_for("the aborted phase", |s| s["phase"] == "aborted");

    let runs = api.get("/runs").json();
    assert_eq!(runs[0]["run_id"], run_id.as_str());
    assert_eq!(runs[0]["meta"]["stop"], "aborted");
    // the abort flushed whatever telemetry was buffered
    let t = api.get(&format!("/telemetry?run={run_id}"));
    assert_eq!(t.status, 200);
    assert!(t.json()["count"].as_u64().unwrap() >= 16);
    // a new run may start once the previous one is over
    assert_eq!(api.post("/runs", &json!({"recipe_id": SAMPLE_ID})).status, 201);
}

#[test]
fn telemetry_queries_and_csv_match_tick_arithmetic() {
    let api = live(Pacing::Max, None);
    assert_eq!(api.post("/recipes", &short_recipe("one-hour", 1)).status, 201);
    let run_id = api.post("/runs", &json!({"recipe_id": "one-hour"})).json()["run_id"].as_str().unwrap().to_string();
    api.wait_for("the run to end", |s| s["phase"] == "ended");

    // 0, 10, …, 3600: 361 ticks of 8 variables on 2 streams
    let ticks = 3600 / 10 + 1;
    let csv = api.get(&format!("/telemetry.csv?run={run_id}"));
    assert_eq!(csv.status, 200);
    assert_eq!(csv.headers.get("content-type").unwrap(), "text/csv");
    let text = String::from_utf8(csv.body).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 2 * ticks);
    assert_eq!(text.as_bytes(), api.store.export_csv(&run_id, None).unwrap());

    let measured = api.get(&format!("/telemetry.csv?run={run_id}&stream=measured"));
    assert_eq!(String::from_utf8(measured.body).unwrap().lines().count(), 1 + 8 * ticks);

    // without `run`, the newest run
    let all = api.get("/telemetry").json();
    assert_eq!(all["run_id"], run_id.as_str());
    assert_eq!(all["count"], 8 * 2 * ticks);

    let window = api.get(&format!("/telemetry?run={run_id}&from=100&to=200&var=air_temperature&stream=desired")).json();
    let points = window["points"].as_array().unwrap();
    assert_eq!(points.len(), 11);
    for p in points {
        assert_eq!(p["variable"], "air_temperature");
        assert_eq!(p["stream"], "desired");
        assert_eq!(p["value"], 24.0);
        let t = p["timestamp"].as_u64().unwrap();
        assert!((100..=200).contains(&t));
    }

    api.get("/telemetry?run=nope").error(404, "unknown_run");
    api.get("/telemetry.csv?run=nope").error(404, "unknown_run");
    api.get(&format!("/telemetry?run={run_id}&var=soil")).error(400, "unknown_variable");
    api.get(&format!("/telemetry?run={run_id}&from=abc")).error(400, "bad_request");
    api.get(&format!("/telemetry?run={run_id}&from=9&to=1")).error(400, "bad_request");
    api.get(&format!("/telemetry.csv?run={run_id}&stream=guessed")).error(400, "bad_request");
}

#[test]
fn config_patch_is_validated_and_atomic() {
    let api = live(Pacing::Speed(10.0), None);
    let before = api.get("/config").json();
    assert_eq!(before, serde_json::to_value(ControllerConfig::default()).unwrap());

    let r = api.send("PATCH", "/config", Some(br#"{"control_period_s": 20, "dosing_calibration": {"ph_up": 10.0}}"#));
    assert_eq!(r.status, 200);
    assert_eq!(r.json()["control_period_s"], 20);
    assert_eq!(r.json()["dosing_calibration"]["ph_up"], 10.0);
    assert_eq!(api.get("/config").json(), r.json());

    // a patch that fails validation leaves nothing half-applied
    api.send("PATCH", "/config", Some(br#"{"control_period_s": 30, "dosing_calibration": {"ph_down": -1}}"#))
        .error(400, "invalid_config");
    api.send("PATCH", "/config", Some(br#"{"control_period_s": 0}"#)).error(400, "invalid_config");
    api.send("PATCH", "/config", Some(b"[1]")).error(400, "bad_request");
    api.send("PATCH", "/config", Some(b"{")).error(400, "bad_request");
    assert_eq!(api.get("/config").json(), r.json());
}

#[test]
fn gets_are_side_effect_free() {
    let api = live(Pacing::Speed(10.0), None);
    assert_eq!(api.send("POST", "/recipes", Some(SAMPLE_RECIPE_JSON.as_bytes())).status, 201);
    let seq = api.store.last_seq();
    for path in ["/state", "/recipes", &format!("/recipes/{SAMPLE_ID}"), "/runs", "/config", "/health", "/telemetry"] {
        api.get(path);
    }
    assert_eq!(api.store.last_seq(), seq);
}

#[test]
fn token_cors_and_fallbacks() {
    let mut api = live(Pacing::Speed(10.0), Some("s3cret"));
    assert_eq!(api.get("/state").status, 200);
    api.get("/nope").error(404, "not_found");
    api.send("DELETE", "/recipes", None).error(405, "method_not_allowed");

    let token = api.token.take();
    api.get("/state").error(401, "unauthorized");
    api.post("/runs", &json!({"recipe_id": "x"})).error(401, "unauthorized");
    assert_eq!(api.get("/health").status, 200);
    api.token = Some("wrong".into());
    api.get("/config").error(401, "unauthorized");
    api.token = token;

    let req = ureq::http::Request::builder()
        .method("OPTIONS")
        .uri(api.url("/recipes"))
        .header("Origin", "http://localhost:5173")
        .header("Access-Control-Request-Method", "POST")
        .header("Access-Control-Request-Headers", "authorization,content-type")
        .body(Vec::new())
        .unwrap();
    let resp = api.agent.run(req).unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    assert_eq!(resp.headers().get("access-control-allow-origin").unwrap(), "*");
    let allowed = resp.headers().get("access-control-allow-headers").unwrap().to_str().unwrap().to_lowercase();
    assert!(allowed.contains("authorization"));
}
