//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use biasprobe::scm::CausalDag;

/// d-separation by explicit enumeration of every simple path in the skeleton.
/// Works on the raw edge list, latent nodes included, with no reachability tricks.
pub struct BruteDag {
    pub names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl BruteDag {
    /// Mirrors a library DAG, expanding each bidirected edge into its own latent parent.
    pub fn from_dag(dag: &CausalDag) -> Self {
        let mut names: Vec<String> = dag.observed_nodes().map(str::to_string).collect();
        let idx = |names: &Vec<String>, n: &str| names.iter().position(|x| x == n).unwrap();
        let mut edges: Vec<(usize, usize)> = dag
            .directed_edges()
            .into_iter()
            .filter(|(a, b)| names.iter().any(|n| n == a) && names.iter().any(|n| n == b))
            .map(|(a, b)| (idx(&names, a), idx(&names, b)))
            .collect();
        for (a, b) in dag.bidirected_edges() {
            let (ia, ib) = (idx(&names, a), idx(&names, b));
            names.push(format!("latent_{a}_{b}"));
            let u = names.len() - 1;
            edges.push((u, ia));
            edges.push((u, ib));
        }
        BruteDag { names, edges }
    }

    fn id(&self, n: &str) -> usize {
        self.names.iter().position(|x| x == n).unwrap_or_else(|| panic!("no node {n}"))
    }

    fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([v]);
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            for &(a, b) in &self.edges {
                if a == x && out.insert(b) {
                    stack.push(b);
                }
            }
        }
        out
    }

    fn adjacent(&self, x: usize, y: usize) -> bool {
        self.edges.iter().any(|&e| e == (x, y) || e == (y, x))
    }

    fn arrow_into(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    fn active(&self, path: &[usize], z: &BTreeSet<usize>) -> bool {
        for i in 1..path.len() - 1 {
            let (p, v, n) = (path[i - 1], path[i], path[i + 1]);
            let collider = self.arrow_into(p, v) && self.arrow_into(n, v);
            if collider {
                if self.descendants(v).is_disjoint(z) {
                    return false;
                }
            } else if z.contains(&v) {
                return false;
            }
        }
        true
    }

    fn any_active(&self, path: &mut Vec<usize>, target: usize, z: &BTreeSet<usize>) -> bool {
        let last = *path.last().unwrap();
        if last == target {
            return self.active(path, z);
        }
        for next in 0..self.names.len() {
            if path.contains(&next) || !self.adjacent(last, next) {
                continue;
            }
            path.push(next);
            let hit = self.any_active(path, target, z);
            path.pop();
            if hit {
                return true;
            }
        }
        false
    }

    pub fn d_separated(&self, a: &str, b: &str, given: &[&str]) -> bool {
        let z: BTreeSet<usize> = given.iter().map(|n| self.id(n)).collect();
        let mut path = vec![self.id(a)];
        !self.any_active(&mut path, self.id(b), &z)
    }
}

/// All subsets of `items`.
pub fn subsets<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    (0..1usize << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, x)| x.clone())
                .collect()
        })
        .collect()
}

/// Checks every (a, b, given) triple over observed nodes; returns the count checked.
pub fn assert_agrees(dag: &CausalDag) -> usize {
    let brute = BruteDag::from_dag(dag);
    let observed: Vec<String> = dag.observed_nodes().map(str::to_string).collect();
    let mut checked = 0;
    for (i, a) in observed.iter().enumerate() {
        for b in &observed[i + 1..] {
            let rest: Vec<&str> =
                observed.iter().filter(|n| *n != a && *n != b).map(String::as_str).collect();
            for given in subsets(&rest) {
                let got = dag.d_separated(a, b, &given).unwrap();
                let want = brute.d_separated(a, b, &given);
                assert_eq!(got, want, "{a} _|_ {b} | {given:?} on {:?}", dag.to_spec());
                checked += 1;
            }
        }
    }
    checked
}

/// The with_gender DAG plus the selection node S as a child of Z.
pub fn with_gender_and_selection() -> CausalDag {
    let mut dag = biasprobe::scm::builtin_dag(biasprobe::scm::BuiltinDag::WithGender);
    dag.add_node("S").unwrap();
    dag.add_edge("Z", "S").unwrap();
    dag.mark_selection("S").unwrap();
    dag
}

/// Closed-form P(female | w, S=1) for the clamped linear access model.
pub fn posterior_oracle(p: &biasprobe::scm::ScmParams, w: usize) -> f64 {
    let x = w as f64 / (p.axis_levels - 1) as f64;
    let af = (p.access_base_f + p.access_gain_f * x).clamp(0.0, 1.0);
    let am = (p.access_base_m + p.access_gain_m * x).clamp(0.0, 1.0);
    p.p_female * af / (p.p_female * af + (1.0 - p.p_female) * am)
}

/// Exact I(W; G | S=1) in nats from the joint P(w, g, S=1).
pub fn selected_mi_oracle(p: &biasprobe::scm::ScmParams) -> f64 {
    let k = p.axis_levels;
    let mut joint = vec![[0.0f64; 2]; k];
    for (w, row) in joint.iter_mut().enumerate() {
        let x = w as f64 / (k - 1) as f64;
        let af = (p.access_base_f + p.access_gain_f * x).clamp(0.0, 1.0);
        let am = (p.access_base_m + p.access_gain_m * x).clamp(0.0, 1.0);
        row[0] = p.p_female * af / k as f64;
        row[1] = (1.0 - p.p_female) * am / k as f64;
    }
    let z: f64 = joint.iter().map(|r| r[0] + r[1]).sum();
    let pg = [
        joint.iter().map(|r| r[0]).sum::<f64>() / z,
        joint.iter().map(|r| r[1]).sum::<f64>() / z,
    ];
    let mut mi = 0.0;
    for row in &joint {
        let pw = (row[0] + row[1]) / z;
        for g in 0..2 {
            let pwg = row[g] / z;
            if pwg > 0.0 {
                mi += pwg * (pwg / (pw * pg[g])).ln();
            }
        }
    }
    mi
}

/// A scripted fill-mask endpoint on a background tokio runtime.
pub mod fake_endpoint {
    use std::collections::VecDeque;
    use std::sync::{Arc, Mutex};
    use std::time::Duration;

    use axum::body::Bytes;
    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::Router;

    #[derive(Debug, Clone)]
    pub struct Request {
        pub body: serde_json::Value,
        pub authorization: Option<String>,
    }

    #[derive(Default)]
    struct Inner {
        script: VecDeque<(u16, String, Duration)>,
        fallback: Option<(u16, String)>,
        seen: Vec<Request>,
    }

    #[derive(Clone, Default)]
    pub struct Endpoint {
        inner: Arc<Mutex<Inner>>,
        pub url: String,
    }

    impl Endpoint {
        /// Queues one response; queued responses are used before the fallback.
        pub fn push(&self, status: u16, body: &str) {
            self.push_delayed(status, body, Duration::ZERO);
        }

        pub fn push_delayed(&self, status: u16, body: &str, delay: Duration) {
            self.inner.lock().unwrap().script.push_back((status, body.to_string(), delay));
        }

        pub fn set_fallback(&self, status: u16, body: &str) {
            self.inner.lock().unwrap().fallback = Some((status, body.to_string()));
        }

        pub fn requests(&self) -> Vec<Request> {
            self.inner.lock().unwrap().seen.clone()
        }
    }

    async fn handle(State(ep): State<Endpoint>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
        let next = {
            let mut inner = ep.inner.lock().unwrap();
            inner.seen.push(Request {
                body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                authorization: headers
                    .get("authorization")
                    .and_then(|v| v.to_str().ok())
                    .map(str::to_string),
            });
            inner.script.pop_front().or_else(|| {
                inner.fallback.clone().map(|(s, b)| (s, b, Duration::ZERO))
            })
        };
        let (status, body, delay) = next.unwrap_or((500, "no script".into(), Duration::ZERO));
        tokio::time::sleep(delay).await;
        (StatusCode::from_u16(status).unwrap(), body)
    }

    /// Starts the endpoint; it lives until the test process exits.
    pub fn start() -> Endpoint {
        let (tx, rx) = std::sync::mpsc::channel();
        let mut ep = Endpoint::default();
        let state = ep.clone();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new().route("/", post(handle)).with_state(state);
                axum::serve(listener, app).await.unwrap();
            });
        });
        ep.url = format!("http://{}/", rx.recv().unwrap());
        ep
    }
}
