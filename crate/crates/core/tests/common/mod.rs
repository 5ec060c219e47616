#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde_json::{json, Value};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hermetic")
}

pub fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Copies the hermetic bundle (minus earlier run outputs) into `dest`.
pub fn copy_fixtures(dest: &Path) {
    fn copy(src: &Path, dest: &Path) {
        fs::create_dir_all(dest).unwrap();
        for entry in fs::read_dir(src).unwrap() {
            let entry = entry.unwrap();
            let to = dest.join(entry.file_name());
            if entry.file_type().unwrap().is_dir() {
                if entry.file_name() != "runs" {
                    copy(&entry.path(), &to);
                }
            } else {
                fs::copy(entry.path(), to).unwrap();
            }
        }
    }
    copy(&fixture_dir(), dest);
}

/// Report JSON with the wall-clock timestamps blanked.
pub fn without_timestamps(report: &str) -> Value {
    let mut v: Value = serde_json::from_str(report).unwrap();
    v["provenance"]["timestamps"] = Value::Null;
    v
}

#[derive(Clone, Copy)]
pub enum LlmMode {
    /// One sentence per variable listed in the prompt.
    Numbered,
    /// Every request answered with this status.
    Status(u16),
}

/// Chat-completions stand-in on an ephemeral port; returns its base URL.
pub fn spawn_llm(mode: LlmMode) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            let response = match mode {
                LlmMode::Status(code) => tiny_http::Response::from_string("upstream failure").with_status_code(code),
                LlmMode::Numbered => {
                    let req: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                    let user = req.pointer("/messages/1/content").and_then(Value::as_str).unwrap_or("");
                    let content: Vec<String> = user
                        .lines()
                        .filter_map(|l| {
                            let (num, rest) = l.split_once(". ")?;
                            num.parse::<usize>().ok()?;
                            let var = rest.split_whitespace().next()?;
                            Some(format!("{num}. {var} shifts presence through its effect on growing-season water balance."))
                        })
                        .collect();
                    let reply = json!({"choices": [{"message": {"role": "assistant", "content": content.join("\n")}}]});
                    tiny_http::Response::from_string(reply.to_string()).with_header(
                        "Content-Type: application/json".parse::<tiny_http::Header>().unwrap(),
                    )
                }
            };
            let _ = request.respond(response);
        }
    });
    url
}

/// Adjacency `adj[u]` = children of `u`.
pub type Adj = Vec<Vec<usize>>;

pub fn is_acyclic(adj: &Adj) -> bool {
    let n = adj.len();
    let mut indeg = vec![0; n];
    for cs in adj {
        for &c in cs {
            indeg[c] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = stack.pop() {
        seen += 1;
        for &c in &adj[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                stack.push(c);
            }
        }
    }
    seen == n
}

/// Every labelled DAG on `n` nodes.
pub fn all_dags(n: usize) -> Vec<Adj> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut adj = vec![Vec::new(); n];
        let mut c = code;
        for &(i, j) in &pairs {
            match c % 3 {
                1 => adj[i].push(j),
                2 => adj[j].push(i),
                _ => {}
            }
            c /= 3;
        }
        if is_acyclic(&adj) {
            out.push(adj);
        }
    }
    out
}

fn descendants(adj: &Adj, v: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        if !seen[u] {
            seen[u] = true;
            stack.extend(&adj[u]);
        }
    }
    seen
}

/// d-separation by enumerating every simple undirected path from `x` to
/// `y` and checking each for a blocking node.
pub fn d_separated_by_paths(adj: &Adj, x: usize, y: usize, z: &[usize]) -> bool {
    let n = adj.len();
    let mut has_edge = vec![vec![false; n]; n];
    for (u, cs) in adj.iter().enumerate() {
        for &c in cs {
            has_edge[u][c] = true;
        }
    }
    let in_z: Vec<bool> = (0..n).map(|v| z.contains(&v)).collect();
    let desc: Vec<Vec<bool>> = (0..n).map(|v| descendants(adj, v)).collect();
    let opens = |path: &[usize]| -> bool {
        path.windows(3).all(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            let collider = has_edge[a][b] && has_edge[c][b];
            if collider {
                (0..n).any(|d| in_z[d] && desc[b][d])
            } else {
                !in_z[b]
            }
        })
    };
    fn walk(
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        y: usize,
        has_edge: &[Vec<bool>],
        opens: &dyn Fn(&[usize]) -> bool,
    ) -> bool {
        let v = *path.last().unwrap();
        if v == y {
            return opens(path);
        }
        for u in 0..has_edge.len() {
            if !on_path[u] && (has_edge[v][u] || has_edge[u][v]) {
                path.push(u);
                on_path[u] = true;
                let open = walk(path, on_path, y, has_edge, opens);
                on_path[u] = false;
                path.pop();
                if open {
                    return true;
                }
            }
        }
        false
    }
    let mut on_path = vec![false; n];
    on_path[x] = true;
    !walk(&mut vec![x], &mut on_path, y, &has_edge, &opens)
}

pub fn to_causal_graph(adj: &Adj) -> habitat::inference::CausalGraph {
    let names = (0..adj.len()).map(|i| format!("v{i}")).collect();
    let edges: Vec<(usize, usize)> =
        adj.iter().enumerate().flat_map(|(u, cs)| cs.iter().map(move |&c| (u, c))).collect();
    habitat::inference::CausalGraph::from_edges(names, &edges)
}

/// All subsets of `pool`.
pub fn subsets(pool: &[usize]) -> Vec<Vec<usize>> {
    (0..1u32 << pool.len())
        .map(|m| pool.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, &v)| v).collect())
        .collect()
}

/// Mismatches between `CausalGraph::d_separated` and the path oracle over
/// every (x, y, Z) with x < y and Z disjoint from both.
pub fn dsep_mismatches(adj: &Adj) -> usize {
    let g = to_causal_graph(adj);
    let n = adj.len();
    let mut bad = 0;
    for x in 0..n {
        for y in x + 1..n {
            let rest: Vec<usize> = (0..n).filter(|&v| v != x && v != y).collect();
            for z in subsets(&rest) {
                if g.d_separated(x, y, &z).unwrap() != d_separated_by_paths(adj, x, y, &z) {
                    bad += 1;
                }
            }
        }
    }
    bad
}
