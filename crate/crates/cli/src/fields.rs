//! Built-in fields selected by `name[:parameter]`, or grid files by path.

use std::f64::consts::PI;
use std::path::Path;

use ampere_core::grid::{GridFunction, GridSpec, Topology};
use ampere_core::io::read_grid;
use ampere_core::jko::Density1D;
use ampere_core::vorticity::patch_density;
use ampere_core::{Error, Result};

pub const HELP: &str =
    "Fields are const[:c], quad[:a], cosine[:a], patch[:r] or the path of a MAGRID file.";

enum Source<'a> {
    Const(f64),
    Quad(f64),
    Cosine(f64),
    Patch(f64),
    File(&'a str),
}

fn parse(text: &str) -> Result<Source<'_>> {
    let (name, param) = match text.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (text, None),
    };
    let value = |default: f64| -> Result<f64> {
        match param {
            None => Ok(default),
            Some(p) => p.parse().map_err(|_| {
                Error::InvalidParameter(format!("bad parameter '{p}' in field '{text}'"))
            }),
        }
    };
    Ok(match name {
        "const" => Source::Const(value(1.0)?),
        "quad" => Source::Quad(value(1.0)?),
        "cosine" => Source::Cosine(value(0.2)?),
        "patch" => Source::Patch(value(0.2)?),
        _ => Source::File(text),
    })
}

fn load(path: &str) -> Result<GridFunction> {
    let text = std::fs::read_to_string(Path::new(path)).map_err(|e| {
        Error::InvalidParameter(format!("'{path}' is neither a built-in field nor a readable file: {e}"))
    })?;
    read_grid(&text)
}

/// The grid shared by `inputs`: that of the first file among them, otherwise
/// the unit square or torus with `n` cells per side.
pub fn common_spec(inputs: &[&str], n: usize, topology: Topology) -> Result<GridSpec> {
    for s in inputs {
        if let Source::File(p) = parse(s)? {
            return Ok(*load(p)?.spec());
        }
    }
    match topology {
        Topology::Box => GridSpec::unit_box(n),
        Topology::Torus => GridSpec::unit_torus(n),
    }
}

/// - `const:c` is the constant `c`;
/// - `quad:a` is `a (x^2 + y^2) / 2`;
/// - `cosine:a` is `1 + a cos(2 pi x / lx)`;
/// - `patch:r` is a smoothed disc of radius `r` at the centre of a torus,
///   normalized to mean one.
pub fn grid_field(text: &str, spec: GridSpec) -> Result<GridFunction> {
    let u = match parse(text)? {
        Source::Const(c) => GridFunction::constant(spec, c),
        Source::Quad(a) => GridFunction::from_fn(spec, |x, y| 0.5 * a * (x * x + y * y)),
        Source::Cosine(a) => {
            GridFunction::from_fn(spec, |x, _| 1.0 + a * (2.0 * PI * x / spec.lx).cos())
        }
        Source::Patch(r) => patch_density(spec, [0.5 * spec.lx, 0.5 * spec.ly], r)?.rho,
        Source::File(p) => load(p)?,
    };
    spec.ensure_same(u.spec())?;
    Ok(u)
}

/// Bin masses on the circle sampled from
/// - `const`: uniform;
/// - `quad:a`: `1 + a (x - 1/2)^2`;
/// - `cosine:a`: `1 + a cos(2 pi x)`;
/// - `patch:w`: `max(0, 1 - ((x - 1/2) / w)^2)`.
pub fn density_1d(text: &str, n: usize) -> Result<Density1D> {
    match parse(text)? {
        Source::Const(_) => Density1D::uniform(n),
        Source::Quad(a) => Density1D::from_fn(n, |x| 1.0 + a * (x - 0.5) * (x - 0.5)),
        Source::Cosine(a) => Density1D::from_fn(n, |x| 1.0 + a * (2.0 * PI * x).cos()),
        Source::Patch(w) => {
            Density1D::from_fn(n, |x| (1.0 - ((x - 0.5) / w).powi(2)).max(0.0))
        }
        Source::File(p) => Err(Error::InvalidParameter(format!(
            "unknown 1D density '{p}' (const, quad:a, cosine:a or patch:w)"
        ))),
    }
}
