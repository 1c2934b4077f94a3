#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use latcompass_core::engine::Engine;
use latcompass_core::generator::{BuiltinGenerator, Generator};
use latcompass_core::store::DirectionStore;
use latcompass_service::config::EngineArgs;
use latcompass_service::server::BackgroundServer;
use latcompass_service::state::AppState;
use serde_json::{json, Value};

pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("status {} body is not JSON ({e}): {:?}", self.status, self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    /// `error_code` of an error reply.
    pub fn code(&self) -> String {
        self.json()["error_code"].as_str().unwrap_or_default().to_string()
    }
}

#[derive(Clone)]
pub struct Api {
    base: String,
    agent: ureq::Agent,
}

impl Api {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { base: base.into(), agent }
    }

    fn finish(response: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut response = response.expect("request reaches the server");
        let status = response.status().as_u16();
        let body = response.body_mut().with_config().limit(64 << 20).read_to_vec().expect("readable body");
        Reply { status, body }
    }

    pub fn get(&self, path: &str) -> Reply {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn post(&self, path: &str, body: &Value) -> Reply {
        self.post_raw(path, &body.to_string())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> Reply {
        Self::finish(
            self.agent.post(format!("{}{path}", self.base)).content_type("application/json").send(body.to_string()),
        )
    }

    pub fn delete(&self, path: &str) -> Reply {
        Self::finish(self.agent.delete(format!("{}{path}", self.base)).call())
    }

    /// Asserts a success status and returns the JSON body.
    pub fn ok(&self, reply: Reply) -> Value {
        assert!((200..300).contains(&reply.status), "status {}: {}", reply.status, reply.text());
        reply.json()
    }
}

pub fn state_with(generator: Arc<dyn Generator>, dir: &std::path::Path, ttl: Duration) -> AppState {
    let args = EngineArgs::default();
    let engine = Engine::new(generator, args.truncation_theta).unwrap();
    AppState::new(engine, DirectionStore::open(dir).unwrap(), args.calibration(), ttl)
}

/// Builtin-backed service on a free port.
pub fn service(dir: &std::path::Path) -> (BackgroundServer, Api) {
    let server = BackgroundServer::start_service(state_with(
        Arc::new(BuiltinGenerator::new()),
        dir,
        Duration::from_secs(86_400),
    ))
    .unwrap();
    let api = Api::new(server.url());
    (server, api)
}

pub fn create_session(api: &Api, category: u32, space: &str) -> String {
    let reply = api.post("/api/sessions", &json!({"category": category, "space": space}));
    assert_eq!(reply.status, 201, "{}", reply.text());
    reply.json()["session_id"].as_str().unwrap().to_string()
}

/// Pool images as (image_id, z) in pool order.
pub fn fill_pool(api: &Api, session: &str, count: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let body = api.ok(api.post(&format!("/api/sessions/{session}/pool"), &json!({"count": count, "seed": seed})));
    body["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let z = s["z"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            (s["image_id"].as_str().unwrap().to_string(), z)
        })
        .collect()
}

pub fn assign(api: &Api, session: &str, image: &str, side: &str) -> Reply {
    api.post(&format!("/api/sessions/{session}/assignments"), &json!({"image_id": image, "side": side}))
}

/// Sorts the `per_side` lowest `z₁` images left and the highest right.
pub fn sort_by_first_axis(api: &Api, session: &str, pool: &[(String, Vec<f64>)], per_side: usize) {
    let mut order: Vec<&(String, Vec<f64>)> = pool.iter().collect();
    order.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
    for (id, _) in &order[..per_side] {
        api.ok(assign(api, session, id, "left"));
    }
    for (id, _) in &order[order.len() - per_side..] {
        api.ok(assign(api, session, id, "right"));
    }
}

/// Session in category 0 sorted on `z₁`, calibrated; returns the compass
/// summary.
pub fn calibrated_compass(api: &Api, space: &str, seed: u64) -> Value {
    let session = create_session(api, 0, space);
    let pool = fill_pool(api, &session, 40, seed);
    sort_by_first_axis(api, &session, &pool, 7);
    let reply = api.post(&format!("/api/sessions/{session}/calibrate"), &json!({}));
    assert_eq!(reply.status, 201, "{}", reply.text());
    reply.json()
}
