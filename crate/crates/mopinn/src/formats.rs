//! Metrics CSV, binary checkpoints, point-cloud labels and field export.

use std::fs;
use std::io::Write;
use std::path::Path;

use mopinn_core::autodiff::OutputMap;
use mopinn_core::labels::{LabelSet, LabelSource};
use mopinn_core::network::{Activation, InputTransform, NetworkParams, NetworkSpec};
use mopinn_core::TrainableVector;

use crate::experiment::TrialResult;
use crate::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Writes `iteration,objective,value,eta,lr` rows; validation rows use the
/// objective name `vald` and leave `eta` empty.
pub fn write_metrics<W: Write>(out: W, result: &TrialResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "value", "eta", "lr"])?;
    for r in &result.history {
        let it = r.iteration.to_string();
        let lr = r.lr.to_string();
        for (k, name) in result.objective_names.iter().enumerate() {
            w.write_record([
                &it,
                name,
                &r.values[k].to_string(),
                &r.etas[k].to_string(),
                &lr,
            ])?;
        }
        if let Some(v) = r.vald {
            w.write_record([&it, "vald", &v.to_string(), "", &lr])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics(path: &Path, result: &TrialResult) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(std::io::BufWriter::new(file), result).map_err(|e| csv_err(path, e))
}

/// One parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub objective: String,
    pub value: f64,
    pub eta: Option<f64>,
    pub lr: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {what}"),
        };
        let num = |i: usize, what: &str| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(what))
        };
        rows.push(MetricsRow {
            iteration: rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("iteration"))?,
            objective: rec.get(1).ok_or_else(|| bad("objective"))?.to_string(),
            value: num(2, "value")?,
            eta: match rec.get(3) {
                Some("") | None => None,
                Some(s) => Some(s.parse().map_err(|_| bad("eta"))?),
            },
            lr: num(4, "lr")?,
        });
    }
    Ok(rows)
}

const MAGIC: &[u8; 8] = b"MOPINNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network, trained values and the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkSpec,
    pub params: TrainableVector,
    pub output_map: Option<OutputMap>,
    pub seed: u64,
    pub iteration: u64,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "string is not UTF-8".to_string())
    }

    fn len(&mut self, limit: usize) -> std::result::Result<usize, String> {
        let n = self.u64()?;
        if n as usize > limit {
            return Err(format!("length {n} exceeds the remaining data"));
        }
        Ok(n as usize)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    /// Layout (little endian): magic, version, activation, input transform,
    /// widths, parameters in layer order, named extras, optional output map,
    /// seed, iteration.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 8 * self.params.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut b, self.network.activation.name());
        put_str(&mut b, self.network.input_transform.name());
        b.extend_from_slice(&(self.network.layer_widths.len() as u64).to_le_bytes());
        for &w in &self.network.layer_widths {
            b.extend_from_slice(&(w as u64).to_le_bytes());
        }
        let net = self.params.network();
        b.extend_from_slice(&(net.len() as u64).to_le_bytes());
        for v in net {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.params.extras().len() as u64).to_le_bytes());
        for (name, v) in self.params.named_extras() {
            put_str(&mut b, &name);
            b.extend_from_slice(&v.to_le_bytes());
        }
        match &self.output_map {
            None => b.push(0),
            Some(m) => {
                b.push(1);
                b.extend_from_slice(&(m.shift.len() as u64).to_le_bytes());
                for (s, c) in m.shift.iter().zip(&m.scale) {
                    b.extend_from_slice(&s.to_le_bytes());
                    b.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.iteration.to_le_bytes());
        b
    }

    pub fn from_bytes(data: &[u8]) -> std::result::Result<Self, String> {
        let mut c = Cursor { data, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let act = c.string()?;
        let activation =
            Activation::from_name(&act).ok_or_else(|| format!("unknown activation `{act}`"))?;
        let tr = c.string()?;
        let input_transform = InputTransform::from_name(&tr)
            .ok_or_else(|| format!("unknown input transform `{tr}`"))?;
        let n_layers = c.len(data.len() / 8)?;
        let widths = (0..n_layers)
            .map(|_| c.u64().map(|w| w as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let network =
            NetworkSpec::new(widths, activation, input_transform).map_err(|e| e.to_string())?;
        let n = c.len(data.len() / 8)?;
        let flat = (0..n)
            .map(|_| c.f64())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let net = NetworkParams::from_flat(&network, flat).map_err(|e| e.to_string())?;
        let n_extra = c.len(data.len() / 8)?;
        let mut extras = Vec::with_capacity(n_extra);
        for _ in 0..n_extra {
            let name = c.string()?;
            extras.push((name, c.f64()?));
        }
        let output_map = match c.take(1)?[0] {
            0 => None,
            1 => {
                let k = c.len(data.len() / 16)?;
                let mut m = OutputMap::identity(k);
                for i in 0..k {
                    m.shift[i] = c.f64()?;
                    m.scale[i] = c.f64()?;
                }
                Some(m)
            }
            t => return Err(format!("bad output map tag {t}")),
        };
        let seed = c.u64()?;
        let iteration = c.u64()?;
        if c.pos != data.len() {
            return Err(format!("{} trailing bytes", data.len() - c.pos));
        }
        Ok(Checkpoint {
            network,
            params: TrainableVector::new(net, extras),
            output_map,
            seed,
            iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&data).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Parses a point cloud: a header `x1[,x2],<field>...`, one point per row,
/// `#` comment lines. Errors carry the physical line number.
pub fn parse_pointcloud(text: &str, path: &Path) -> Result<LabelSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_line, header) = rows.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols
        .iter()
        .enumerate()
        .take_while(|(i, c)| **c == format!("x{}", i + 1))
        .count();
    if dim == 0 {
        return Err(err(
            header_line,
            "header must start with coordinate columns x1[,x2]".into(),
        ));
    }
    let names: Vec<String> = cols[dim..].iter().map(|s| s.to_string()).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(err(header_line, "missing field column names".into()));
    }
    let mut points = Vec::new();
    let mut fields: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (line, row) in rows {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(err(
                line,
                format!("expected {} columns, found {}", cols.len(), cells.len()),
            ));
        }
        for (i, s) in cells.iter().enumerate() {
            let v: f64 = s
                .parse()
                .map_err(|_| err(line, format!("`{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(
                    line,
                    format!("non-finite value in column `{}`", cols[i]),
                ));
            }
            if i < dim {
                points.push(v);
            } else {
                fields[i - dim].push(v);
            }
        }
    }
    if points.is_empty() {
        return Err(err(header_line, "no data rows".into()));
    }
    LabelSet::new(
        dim,
        points,
        names.into_iter().zip(fields).collect(),
        LabelSource::File,
    )
    .map_err(|e| err(header_line, e.to_string()))
}

pub fn read_pointcloud(path: &Path) -> Result<LabelSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pointcloud(&text, path)
}

/// Formats a label set; numbers use the shortest representation that
/// reads back to the same value.
pub fn format_pointcloud(labels: &LabelSet) -> String {
    let dim = labels.dim();
    let mut out = String::new();
    let head: Vec<String> = (1..=dim)
        .map(|i| format!("x{i}"))
        .chain(labels.field_names().map(String::from))
        .collect();
    out.push_str(&head.join(","));
    out.push('\n');
    for (i, x) in labels.points().chunks(dim).enumerate() {
        let row: Vec<String> = x
            .iter()
            .copied()
            .chain(labels.fields().iter().map(|(_, v)| v[i]))
            .map(|v| format!("{v:?}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_pointcloud(path: &Path, labels: &LabelSet) -> Result<()> {
    fs::write(path, format_pointcloud(labels)).map_err(|e| Error::io(path, e))
}

/// Field values at points, as a point cloud with the given column names.
pub fn write_field(
    path: &Path,
    dim: usize,
    points: &[f64],
    names: &[&str],
    values: &[Vec<f64>],
) -> Result<()> {
    let fields = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.to_string(), values.iter().map(|v| v[k]).collect()))
        .collect();
    let set = LabelSet::new(dim, points.to_vec(), fields, LabelSource::File)?;
    write_pointcloud(path, &set)
}
