//! Plain-text file formats and run configuration.
//!
//! Every real number is written as a 17-significant-digit decimal, which
//! parses back to the same double.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, Topology};
use crate::transport::{PointCloud, TransportPlan};
use crate::vorticity::StepRecord;

/// Shortest form here that round-trips a double exactly.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn parse_count(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("{what} '{tok}' is not a count")))
}

/// Lines with 1-based numbers.
fn numbered(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(k, l)| (k + 1, l))
}

/// `MAGRID v1 nx ny lx ly topology`, then one value per node, row-major.
pub fn write_grid(u: &GridFunction) -> String {
    let s = u.spec();
    let mut out = String::with_capacity(26 * (u.values().len() + 1));
    let _ = writeln!(
        out,
        "MAGRID v1 {} {} {} {} {}",
        s.nx,
        s.ny,
        fmt_real(s.lx),
        fmt_real(s.ly),
        s.topology.as_str()
    );
    for v in u.values() {
        out.push_str(&fmt_real(*v));
        out.push('\n');
    }
    out
}

pub fn read_grid(text: &str) -> Result<GridFunction> {
    let mut lines = numbered(text);
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing MAGRID header"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "MAGRID" || toks[1] != "v1" {
        return Err(parse_err(1, "expected 'MAGRID v1 nx ny lx ly topology'"));
    }
    let nx = parse_count(toks[2], 1, "nx")?;
    let ny = parse_count(toks[3], 1, "ny")?;
    let lx = parse_real(toks[4], 1)?;
    let ly = parse_real(toks[5], 1)?;
    let topology: Topology = toks[6]
        .parse()
        .map_err(|_| parse_err(1, format!("unknown topology '{}'", toks[6])))?;
    let spec = GridSpec::new(nx, ny, lx, ly, topology).map_err(|e| parse_err(1, e.to_string()))?;
    let count = spec.len();
    let mut values = Vec::with_capacity(count);
    for (ln, l) in lines {
        let t = l.trim();
        if values.len() == count {
            if t.is_empty() {
                continue;
            }
            return Err(parse_err(ln, format!("more than {count} values")));
        }
        values.push(parse_real(t, ln)?);
    }
    if values.len() < count {
        return Err(parse_err(
            values.len() + 2,
            format!("missing value {} of {count}", values.len() + 1),
        ));
    }
    GridFunction::new(spec, values)
}

/// `MACLOUD v1 k d`, then per point its `d` coordinates and weight.
pub fn write_cloud(c: &PointCloud) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "MACLOUD v1 {} {}", c.len(), c.dim());
    for (p, w) in c.points().zip(c.weights()) {
        let fields: Vec<String> = p.iter().chain(std::iter::once(w)).map(|v| fmt_real(*v)).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_cloud(text: &str) -> Result<PointCloud> {
    let mut lines = numbered(text);
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing MACLOUD header"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "MACLOUD" || toks[1] != "v1" {
        return Err(parse_err(1, "expected 'MACLOUD v1 k d'"));
    }
    let k = parse_count(toks[2], 1, "k")?;
    let d = parse_count(toks[3], 1, "d")?;
    let mut points = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for (ln, l) in lines {
        let t = l.trim();
        if points.len() == k {
            if t.is_empty() {
                continue;
            }
            return Err(parse_err(ln, format!("more than {k} points")));
        }
        let vals = t
            .split_whitespace()
            .map(|tok| parse_real(tok, ln))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != d + 1 {
            return Err(parse_err(ln, format!("expected {} fields, found {}", d + 1, vals.len())));
        }
        weights.push(vals[d]);
        points.push(vals[..d].to_vec());
    }
    if points.len() < k {
        return Err(parse_err(
            points.len() + 2,
            format!("missing point {} of {k}", points.len() + 1),
        ));
    }
    PointCloud::new(points, weights).map_err(|e| parse_err(1, e.to_string()))
}

/// Nonzero plan entries as CSV `i,j,mass`.
pub fn write_plan(plan: &TransportPlan) -> String {
    let mut out = String::from("i,j,mass\n");
    for i in 0..plan.rows {
        for j in 0..plan.cols {
            let m = plan.at(i, j);
            if m != 0.0 {
                let _ = writeln!(out, "{i},{j},{}", fmt_real(m));
            }
        }
    }
    out
}

/// One trajectory row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub residual: f64,
}

impl From<&StepRecord> for TrajectoryRow {
    fn from(r: &StepRecord) -> Self {
        TrajectoryRow {
            step: r.step,
            t: r.t,
            mass: r.mass,
            min: r.min,
            max: r.max,
            residual: r.residual,
        }
    }
}

pub const TRAJECTORY_HEADER: &str = "step,t,mass,min,max,residual";

pub fn write_trajectory(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            fmt_real(r.t),
            fmt_real(r.mass),
            fmt_real(r.min),
            fmt_real(r.max),
            fmt_real(r.residual)
        );
    }
    out
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = numbered(text);
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{TRAJECTORY_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (ln, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(parse_err(ln, format!("expected 6 fields, found {}", f.len())));
        }
        rows.push(TrajectoryRow {
            step: parse_count(f[0], ln, "step")?,
            t: parse_real(f[1], ln)?,
            mass: parse_real(f[2], ln)?,
            min: parse_real(f[3], ln)?,
            max: parse_real(f[4], ln)?,
            residual: parse_real(f[5], ln)?,
        });
    }
    Ok(rows)
}

/// Writes through a temporary file in the same directory and renames it
/// over `path`.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        fs::write(&tmp, contents)?;
        fs::File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// `key = value` lines; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `text`, rejecting keys outside `allowed` and repeated keys.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (ln, raw) in numbered(text) {
            if !raw.is_ascii() {
                return Err(parse_err(ln, "configuration must be ASCII"));
            }
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(ln, format!("expected 'key = value', found '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(parse_err(ln, format!("unknown key '{k}'")));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(parse_err(ln, format!("key '{k}' given twice")));
            }
        }
        Ok(RunConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidParameter(format!("missing required key '{key}'")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| parse_value(key, v))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |v| parse_value(key, v))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key).map_or(Ok(default), |v| parse_value(key, v))
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidParameter(format!("value '{v}' for '{key}' does not parse")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_grid(seed: u64, topology: Topology) -> GridFunction {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(4, 6, 1.0, 1.5, topology).unwrap();
        let vals = (0..spec.len()).map(|_| rng.random_range(-1e3..1e3)).collect();
        GridFunction::new(spec, vals).unwrap()
    }

    #[test]
    fn grid_round_trip_is_byte_identical() {
        for topo in [Topology::Box, Topology::Torus] {
            let u = random_grid(3, topo);
            let text = write_grid(&u);
            let back = read_grid(&text).unwrap();
            assert_eq!(back, u);
            assert_eq!(back.spec().topology, topo);
            assert_eq!(write_grid(&back), text);
        }
    }

    #[test]
    fn truncated_grid_names_missing_line() {
        let text = write_grid(&random_grid(1, Topology::Box));
        let cut: Vec<&str> = text.lines().take(10).collect();
        match read_grid(&cut.join("\n")) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 11);
                assert!(message.contains("missing value 10"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_grid_inputs() {
        assert!(matches!(read_grid(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            read_grid("MAGRID v1 2 2 1 1 sphere\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let mut text = write_grid(&random_grid(2, Topology::Torus));
        text.push_str("1.0\n");
        assert!(matches!(read_grid(&text), Err(Error::Parse { line: 26, .. })));
        let bad = write_grid(&random_grid(2, Topology::Torus)).replacen("\n", "\nabc\n", 1);
        assert!(matches!(read_grid(&bad), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn cloud_round_trip() {
        let c = crate::transport::random_cloud(6, 3, 11).unwrap();
        let text = write_cloud(&c);
        let back = read_cloud(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(write_cloud(&back), text);
        let bad = "MACLOUD v1 2 1\n0.0 0.5\n1.0 0.6\n";
        assert!(matches!(read_cloud(bad), Err(Error::Parse { .. })));
        let short = "MACLOUD v1 2 1\n0.0 0.5\n";
        assert!(matches!(read_cloud(short), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn trajectory_round_trip() {
        let rows = vec![
            TrajectoryRow { step: 0, t: 0.0, mass: 1.0, min: 0.5, max: 1.5, residual: 1e-13 },
            TrajectoryRow { step: 1, t: 0.01, mass: 1.0 - 1e-16, min: 0.49, max: 1.51, residual: 3e-12 },
        ];
        let text = write_trajectory(&rows);
        assert_eq!(read_trajectory(&text).unwrap(), rows);
        assert!(read_trajectory("step,t\n").is_err());
        assert!(matches!(
            read_trajectory(&format!("{TRAJECTORY_HEADER}\n1,2,3\n")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn run_config_parsing() {
        let text = "# demo\nn = 32\nseed=7 # trailing\n\ntau = 1e-3\n";
        let cfg = RunConfig::parse(text, &["n", "seed", "tau"]).unwrap();
        assert_eq!(cfg.usize_or("n", 0).unwrap(), 32);
        assert_eq!(cfg.u64_or("seed", 0).unwrap(), 7);
        assert_eq!(cfg.f64_or("tau", 0.0).unwrap(), 1e-3);
        assert_eq!(cfg.f64_or("missing", 2.5).unwrap(), 2.5);
        assert!(cfg.require("missing").is_err());
        assert!(matches!(
            RunConfig::parse("n = 1\nbogus = 2\n", &["n"]),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(RunConfig::parse("n = 1\nn = 2\n", &["n"]).is_err());
        assert!(RunConfig::parse("n 1\n", &["n"]).is_err());
        let again = RunConfig::parse(&cfg.render(), &["n", "seed", "tau"]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.grid");
        atomic_write(&p, b"first").unwrap();
        atomic_write(&p, b"second").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"second");
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
        assert!(atomic_write(&dir.path().join("missing/out.grid"), b"x").is_err());
    }

    proptest! {
        #[test]
        fn reals_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let s = fmt_real(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
