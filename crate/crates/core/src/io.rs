//! Plain-text trajectory and dilaton files.
//!
//! A header of `key value…` lines is followed by one row per state. Floats
//! are written in Rust's shortest round-trip form, so reading a file back
//! reproduces every bit. Derived geometry is recomputed on load and the
//! stored Ricci potential is checked against it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::conjugate::{DilatonPath, Variant};
use crate::error::{Error, Result};
use crate::flow::{FlowKind, FlowState, Trajectory};
use crate::models::{Family, ModelSpec};
use crate::transverse::BasicField;

const TRAJECTORY_MAGIC: &str = "# sasaki-flow trajectory v1";
const DILATON_MAGIC: &str = "# sasaki-flow dilaton v1";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn model_header(out: &mut impl Write, model: &ModelSpec) -> Result<()> {
    let (a, b) = model.weights();
    writeln!(out, "model {} {a:?} {b:?}", model.family())?;
    writeln!(out, "grid {}", model.grid().len())?;
    Ok(())
}

pub fn write_trajectory(out: &mut impl Write, traj: &Trajectory) -> Result<()> {
    let model = traj.model();
    let first = &traj.states()[0];
    writeln!(out, "{TRAJECTORY_MAGIC}")?;
    model_header(out, model)?;
    writeln!(out, "kind {}", traj.kind().as_str())?;
    writeln!(out, "dt {:?}", traj.dt())?;
    writeln!(out, "kappa {:?}", model.kappa())?;
    writeln!(out, "scale {:?}", first.gt.scale())?;
    writeln!(out, "states {}", traj.len())?;
    writeln!(out, "# row: t phi[0..n] u[0..n]")?;
    for st in traj.states() {
        let row = std::iter::once(st.t).chain(st.phi.values().iter().copied()).chain(st.u.values().iter().copied());
        writeln!(out, "{}", join(row))?;
    }
    Ok(())
}

pub fn write_dilaton(out: &mut impl Write, path: &DilatonPath) -> Result<()> {
    let n = path.fields()[0].len();
    writeln!(out, "{DILATON_MAGIC}")?;
    writeln!(out, "variant {}", path.variant().as_str())?;
    writeln!(out, "grid {n}")?;
    writeln!(out, "states {}", path.len())?;
    writeln!(out, "# row: t [tau] f[0..n]")?;
    for (k, f) in path.fields().iter().enumerate() {
        let tau = path.tau().map(|t| t[k]);
        let row = std::iter::once(path.times()[k]).chain(tau).chain(f.values().iter().copied());
        writeln!(out, "{}", join(row))?;
    }
    Ok(())
}

/// Line reader that skips comments after the magic line.
struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(input: R, magic: &str) -> Result<Self> {
        let mut lines = Lines { inner: input.lines(), line: 0 };
        let first = lines.raw()?;
        if first.trim() != magic {
            return Err(Error::Parse(format!("expected `{magic}`, found `{first}`")));
        }
        Ok(lines)
    }

    fn raw(&mut self) -> Result<String> {
        self.line += 1;
        self.inner
            .next()
            .transpose()?
            .ok_or_else(|| Error::Parse(format!("unexpected end of file at line {}", self.line)))
    }

    fn next(&mut self) -> Result<String> {
        loop {
            let l = self.raw()?;
            if !l.trim_start().starts_with('#') && !l.trim().is_empty() {
                return Ok(l);
            }
        }
    }

    /// Reads `key v₁ v₂ …` and returns the values.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse(format!("line {}: expected `{key}`, found `{l}`", self.line)));
        }
        Ok(parts.map(str::to_owned).collect())
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let v = l.split_whitespace().map(|x| parse::<f64>(x, self.line)).collect::<Result<Vec<_>>>()?;
        if v.len() != expected {
            return Err(Error::Parse(format!("line {}: expected {expected} values, found {}", self.line, v.len())));
        }
        Ok(v)
    }
}

fn parse<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("line {line}: cannot parse `{s}`")))
}

fn single<T: std::str::FromStr>(v: &[String], line: usize) -> Result<T> {
    match v {
        [x] => parse(x, line),
        _ => Err(Error::Parse(format!("line {line}: expected one value"))),
    }
}

pub fn read_trajectory(input: impl BufRead) -> Result<Trajectory> {
    let mut lines = Lines::new(input, TRAJECTORY_MAGIC)?;
    let m = lines.keyed("model")?;
    if m.len() != 3 {
        return Err(Error::Parse("model line needs family, a and b".into()));
    }
    let family: Family = m[0].parse()?;
    let (a, b) = (parse::<f64>(&m[1], lines.line)?, parse::<f64>(&m[2], lines.line)?);
    let n: usize = single(&lines.keyed("grid")?, lines.line)?;
    let kind: FlowKind = single::<String>(&lines.keyed("kind")?, lines.line)?.parse()?;
    let dt: f64 = single(&lines.keyed("dt")?, lines.line)?;
    let kappa: f64 = single(&lines.keyed("kappa")?, lines.line)?;
    let scale: f64 = single(&lines.keyed("scale")?, lines.line)?;
    let count: usize = single(&lines.keyed("states")?, lines.line)?;
    let model = ModelSpec::new(family, a, b, n)?;
    if kappa != model.kappa() {
        return Err(Error::Parse(format!("unsupported kappa {kappa}")));
    }
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        let row = lines.floats(1 + 2 * n)?;
        let phi = BasicField::new(model.grid().clone(), row[1..=n].to_vec())?;
        let st = FlowState::rebuild(&model, kind, row[0], phi, scale)?;
        if st.u.values() != &row[n + 1..] {
            return Err(Error::Parse(format!(
                "line {}: stored Ricci potential does not match the potential",
                lines.line
            )));
        }
        states.push(st);
    }
    Trajectory::new(model, kind, dt, states)
}

pub fn read_dilaton(input: impl BufRead, model: &ModelSpec) -> Result<DilatonPath> {
    let mut lines = Lines::new(input, DILATON_MAGIC)?;
    let variant: Variant = single::<String>(&lines.keyed("variant")?, lines.line)?.parse()?;
    let n: usize = single(&lines.keyed("grid")?, lines.line)?;
    if n != model.grid().len() {
        return Err(Error::Alignment(format!("file has {n} nodes, model has {}", model.grid().len())));
    }
    let count: usize = single(&lines.keyed("states")?, lines.line)?;
    let with_tau = variant == Variant::W;
    let width = 1 + with_tau as usize + n;
    let (mut times, mut fields, mut taus) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        let row = lines.floats(width)?;
        times.push(row[0]);
        if with_tau {
            taus.push(row[1]);
        }
        fields.push(BasicField::new(model.grid().clone(), row[width - n..].to_vec())?);
    }
    DilatonPath::new(times, fields, with_tau.then_some(taus))
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_trajectory(&mut out, traj)?;
    out.flush()?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory(BufReader::new(File::open(path)?))
}

pub fn save_dilaton(path: impl AsRef<Path>, dilaton: &DilatonPath) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dilaton(&mut out, dilaton)?;
    out.flush()?;
    Ok(())
}

pub fn load_dilaton(path: impl AsRef<Path>, model: &ModelSpec) -> Result<DilatonPath> {
    read_dilaton(BufReader::new(File::open(path)?), model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_flow, to_unnormalized};

    #[test]
    fn rejects_wrong_magic() {
        let err = read_trajectory("garbage\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn unnormalized_round_trip_is_exact() {
        let m = ModelSpec::new(Family::Weighted, 1.0, 2f64.sqrt(), 24).unwrap();
        let phi = BasicField::from_fn(m.grid(), |s| 0.05 * s * s);
        let traj = run_flow(&m, &phi, 0.3, 0.05).unwrap();
        let un = to_unnormalized(&traj, 0.2, 0.05).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &un).unwrap();
        assert_eq!(read_trajectory(buf.as_slice()).unwrap(), un);
    }
}
