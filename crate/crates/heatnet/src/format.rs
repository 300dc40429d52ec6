//! Network documents (JSON) and the tabular CSV formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use heatnet_core::{
    AlgebraicVector, Consumer, Control, DemandSeries, Depot, GlobalParams, Network, NetworkError,
    NetworkSpec, Node, NodeKind, PiecewiseLinear, Pipe, PipeParams, TimeGrid, TimeProfile,
    Trajectory,
};
use heatnet_core::network::STANDARD_GRAVITY;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> FormatError {
    FormatError::Invalid(msg.into())
}

pub fn open(path: &Path) -> Result<File, FormatError> {
    File::open(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

pub fn create(path: &Path) -> Result<File, FormatError> {
    File::create(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

// ---------------------------------------------------------------------------
// network documents

/// A constant or a sampled, linearly interpolated series `{"t": [...], "value": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ProfileDoc {
    Constant(f64),
    Sampled { t: Vec<f64>, value: Vec<f64> },
}

impl ProfileDoc {
    fn into_profile(self, what: &str) -> Result<TimeProfile, FormatError> {
        match self {
            ProfileDoc::Constant(c) => Ok(TimeProfile::Constant(c)),
            ProfileDoc::Sampled { t, value } => PiecewiseLinear::new(t, value)
                .map(TimeProfile::Sampled)
                .ok_or_else(|| invalid(format!("{what}: samples must be non-empty with increasing t"))),
        }
    }

    fn from_profile(p: &TimeProfile, what: &str) -> Result<Self, FormatError> {
        match p {
            TimeProfile::Constant(c) => Ok(ProfileDoc::Constant(*c)),
            TimeProfile::Sampled(s) => {
                Ok(ProfileDoc::Sampled { t: s.times().to_vec(), value: s.values().to_vec() })
            }
            TimeProfile::Analytic(_) => Err(invalid(format!("{what}: closed-form profiles cannot be serialized"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct GlobalDoc {
    rho: f64,
    cp: f64,
    T_ext: f64,
    T_out_bar: ProfileDoc,
    #[serde(default = "standard_gravity")]
    G: f64,
    p_d: ProfileDoc,
}

fn standard_gravity() -> f64 {
    STANDARD_GRAVITY
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindDoc {
    Supply,
    Demand,
    Interior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: KindDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct PipeDoc {
    id: String,
    from: String,
    to: String,
    L: f64,
    d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    A: Option<f64>,
    lambda: f64,
    #[serde(default)]
    dh: f64,
    /// Number of temperature grid points per pipe, inlet included.
    n_segments: usize,
    k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_rough: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsumerDoc {
    id: String,
    pipe_in: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pipe_out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepotDoc {
    pipe_first: String,
    pipe_last: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    global: GlobalDoc,
    nodes: Vec<NodeDoc>,
    pipes: Vec<PipeDoc>,
    consumers: Vec<ConsumerDoc>,
    depot: DepotDoc,
}

fn index_ids<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashMap<&'a str, usize>, NetworkError> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id, i).is_some() {
            return Err(NetworkError::DuplicateId { kind, id: id.to_string() });
        }
    }
    Ok(map)
}

fn resolve(
    map: &HashMap<&str, usize>,
    what: impl FnOnce() -> String,
    kind: &'static str,
    id: &str,
) -> Result<usize, NetworkError> {
    map.get(id).copied().ok_or_else(|| NetworkError::DanglingReference {
        what: what(),
        kind,
        id: id.to_string(),
    })
}

impl NetworkDoc {
    fn into_spec(self) -> Result<NetworkSpec, FormatError> {
        let g = self.global;
        let global = GlobalParams {
            density: g.rho,
            heat_capacity: g.cp,
            external_temperature: g.T_ext,
            return_temperature: g.T_out_bar.into_profile("T_out_bar")?,
            gravity: g.G,
            stagnation_pressure: g.p_d.into_profile("p_d")?,
        };
        let node_ids = index_ids("node", self.nodes.iter().map(|n| n.id.as_str()))?;
        let pipe_ids = index_ids("pipe", self.pipes.iter().map(|p| p.id.as_str()))?;
        index_ids("consumer", self.consumers.iter().map(|c| c.id.as_str()))?;

        let mut pipes = Vec::with_capacity(self.pipes.len());
        for p in &self.pipes {
            let what = || format!("pipe `{}`", p.id);
            let mut params = PipeParams::new(p.L, p.d, p.lambda, p.dh, p.n_segments, p.k);
            if let Some(a) = p.A {
                params.area = a;
            }
            params.roughness = p.k_rough;
            pipes.push(Pipe {
                id: p.id.clone(),
                from: resolve(&node_ids, what, "node", &p.from)?,
                to: resolve(&node_ids, what, "node", &p.to)?,
                params,
            });
        }
        let mut consumers = Vec::with_capacity(self.consumers.len());
        for c in &self.consumers {
            let what = || format!("consumer `{}`", c.id);
            consumers.push(Consumer {
                id: c.id.clone(),
                pipe_in: resolve(&pipe_ids, what, "pipe", &c.pipe_in)?,
                pipe_out: c.pipe_out.as_deref().map(|id| resolve(&pipe_ids, what, "pipe", id)).transpose()?,
            });
        }
        let what = || "depot".to_string();
        let depot = Depot {
            pipe_first: resolve(&pipe_ids, what, "pipe", &self.depot.pipe_first)?,
            pipe_last: resolve(&pipe_ids, what, "pipe", &self.depot.pipe_last)?,
        };
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                kind: match n.kind {
                    KindDoc::Supply => NodeKind::Supply,
                    KindDoc::Demand => NodeKind::Demand,
                    KindDoc::Interior => NodeKind::Interior,
                },
            })
            .collect();
        Ok(NetworkSpec { global, nodes, pipes, consumers, depot })
    }

    fn from_spec(spec: &NetworkSpec) -> Result<Self, FormatError> {
        let g = &spec.global;
        let node_id = |i: usize| spec.nodes[i].id.clone();
        let pipe_id = |i: usize| spec.pipes[i].id.clone();
        Ok(NetworkDoc {
            global: GlobalDoc {
                rho: g.density,
                cp: g.heat_capacity,
                T_ext: g.external_temperature,
                T_out_bar: ProfileDoc::from_profile(&g.return_temperature, "T_out_bar")?,
                G: g.gravity,
                p_d: ProfileDoc::from_profile(&g.stagnation_pressure, "p_d")?,
            },
            nodes: spec
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    kind: match n.kind {
                        NodeKind::Supply => KindDoc::Supply,
                        NodeKind::Demand => KindDoc::Demand,
                        NodeKind::Interior => KindDoc::Interior,
                    },
                })
                .collect(),
            pipes: spec
                .pipes
                .iter()
                .map(|p| {
                    let q = &p.params;
                    let default_area = PipeParams::new(q.length, q.diameter, 0.0, 0.0, 2, 0.0).area;
                    PipeDoc {
                        id: p.id.clone(),
                        from: node_id(p.from),
                        to: node_id(p.to),
                        L: q.length,
                        d: q.diameter,
                        A: (q.area != default_area).then_some(q.area),
                        lambda: q.friction,
                        dh: q.height_difference,
                        n_segments: q.n_points,
                        k: q.heat_transfer,
                        k_rough: q.roughness,
                    }
                })
                .collect(),
            consumers: spec
                .consumers
                .iter()
                .map(|c| ConsumerDoc {
                    id: c.id.clone(),
                    pipe_in: pipe_id(c.pipe_in),
                    pipe_out: c.pipe_out.map(pipe_id),
                })
                .collect(),
            depot: DepotDoc {
                pipe_first: pipe_id(spec.depot.pipe_first),
                pipe_last: pipe_id(spec.depot.pipe_last),
            },
        })
    }
}

/// Parses a network document. Ids are resolved to indices in document order;
/// duplicates and dangling references are errors. No topology validation.
pub fn parse_network_spec(reader: impl Read) -> Result<NetworkSpec, FormatError> {
    let doc: NetworkDoc = serde_json::from_reader(reader)?;
    doc.into_spec()
}

/// Parses and validates a network document.
pub fn parse_network(reader: impl Read) -> Result<Network, FormatError> {
    Ok(Network::new(parse_network_spec(reader)?)?)
}

pub fn load_network(path: &Path) -> Result<Network, FormatError> {
    parse_network(std::io::BufReader::new(open(path)?))
}

pub fn write_network(spec: &NetworkSpec, writer: impl Write) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(writer, &NetworkDoc::from_spec(spec)?)?;
    Ok(())
}

pub fn network_to_string(spec: &NetworkSpec) -> Result<String, FormatError> {
    Ok(serde_json::to_string_pretty(&NetworkDoc::from_spec(spec)?)?)
}

// ---------------------------------------------------------------------------
// CSV tables

fn parse_f64(s: &str, row: usize) -> Result<f64, FormatError> {
    s.trim().parse().map_err(|_| invalid(format!("row {row}: `{s}` is not a number")))
}

fn read_rows(reader: impl Read) -> Result<(Vec<String>, Vec<Vec<f64>>), FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.iter().map(|s| parse_f64(s, i + 1)).collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn times_of(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r[0]).collect()
}

/// Demand table `t,Q_1,...,Q_n` (W), one column per consumer in document order.
pub fn parse_demand(reader: impl Read) -> Result<DemandSeries, FormatError> {
    let (header, rows) = read_rows(reader)?;
    if header.len() < 2 || header[0] != "t" {
        return Err(invalid("demand table needs a `t` column followed by one column per consumer"));
    }
    if rows.is_empty() {
        return Err(invalid("demand table has no rows"));
    }
    let t = times_of(&rows);
    let profiles = (1..header.len())
        .map(|c| {
            PiecewiseLinear::new(t.clone(), rows.iter().map(|r| r[c]).collect())
                .map(TimeProfile::Sampled)
                .ok_or_else(|| invalid("demand times must be strictly increasing"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DemandSeries::new(profiles)?)
}

pub fn load_demand(path: &Path) -> Result<DemandSeries, FormatError> {
    parse_demand(std::io::BufReader::new(open(path)?))
}

/// Column names of a trajectory table.
pub fn trajectory_header(net: &Network) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (i, pipe) in net.pipes().iter().enumerate() {
        for j in 0..net.layout().range(i).len() {
            h.push(format!("T_{}_{}", pipe.id, j + 1));
        }
    }
    for block in ["v", "Tin", "p0", "pL"] {
        h.extend(net.pipes().iter().map(|p| format!("{block}_{}", p.id)));
    }
    h.extend(CONTROL_COLUMNS.iter().map(|s| s.to_string()));
    h
}

const CONTROL_COLUMNS: [&str; 3] = ["P_p", "P_w", "P_g"];

/// `t, x.., y.., u..` with y in blocked order (v, T_in, p(0), p(L)).
pub fn write_trajectory(traj: &Trajectory, net: &Network, writer: impl Write) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trajectory_header(net))?;
    for n in 0..traj.len() {
        let mut row = vec![traj.grid.t(n).to_string()];
        row.extend(traj.x[n].iter().map(f64::to_string));
        row.extend(traj.y[n].to_flat().iter().map(f64::to_string));
        row.extend(traj.u[n].0.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| FormatError::Io { path: PathBuf::from("<trajectory>"), source })?;
    Ok(())
}

pub fn parse_trajectory(reader: impl Read, net: &Network) -> Result<Trajectory, FormatError> {
    let (header, rows) = read_rows(reader)?;
    let (nx, ny) = (net.state_dim(), net.algebraic_dim());
    let width = 1 + nx + ny + 3;
    if header.len() != width {
        return Err(invalid(format!(
            "trajectory table has {} columns, the network needs {width}",
            header.len()
        )));
    }
    let grid = TimeGrid::new(times_of(&rows)).map_err(|e| invalid(e.to_string()))?;
    let mut traj = Trajectory { grid, x: Vec::new(), y: Vec::new(), u: Vec::new() };
    for r in &rows {
        traj.x.push(r[1..1 + nx].to_vec());
        traj.y.push(AlgebraicVector::from_flat(&r[1 + nx..1 + nx + ny]).expect("width checked"));
        traj.u.push(Control([r[width - 3], r[width - 2], r[width - 1]]));
    }
    Ok(traj)
}

/// `t,P_p,P_w,P_g`
pub fn write_controls(grid: &TimeGrid, u: &[Control], writer: impl Write) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "P_p", "P_w", "P_g"])?;
    for (n, c) in u.iter().enumerate() {
        w.write_record([grid.t(n), c.0[0], c.0[1], c.0[2]].map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| FormatError::Io { path: PathBuf::from("<controls>"), source })?;
    Ok(())
}

pub fn parse_controls(reader: impl Read) -> Result<(TimeGrid, Vec<Control>), FormatError> {
    let (header, rows) = read_rows(reader)?;
    if header != ["t", "P_p", "P_w", "P_g"] {
        return Err(invalid("control table header must be `t,P_p,P_w,P_g`"));
    }
    let grid = TimeGrid::new(times_of(&rows)).map_err(|e| invalid(e.to_string()))?;
    Ok((grid, rows.iter().map(|r| Control([r[1], r[2], r[3]])).collect()))
}

/// `dt,error,order_running`; rows without an order (the first) leave it empty.
pub fn write_convergence(points: &[(f64, f64)], writer: impl Write) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dt", "error", "order_running"])?;
    let orders = heatnet_core::verification::running_orders(points);
    for ((dt, err), order) in points.iter().zip(orders) {
        let order = order.map(|o| o.to_string()).unwrap_or_default();
        w.write_record([dt.to_string(), err.to_string(), order])?;
    }
    w.flush().map_err(|source| FormatError::Io { path: PathBuf::from("<convergence>"), source })?;
    Ok(())
}
