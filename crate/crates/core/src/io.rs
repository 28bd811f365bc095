//! CSV emitters for the command-line artifacts and a reader for tabulated
//! densities. Floats are written with 17 significant digits.

use std::fmt::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gauss_bridge::{BridgePolicy, MomentFlow};
use crate::linalg::row_major;
use crate::linsys::TransitionTable;
use crate::omt::{DiscreteCoupling, GridDensity, TransportMap1D};
use crate::sampler::{EnsembleStats, PathEnsemble};
use crate::sinkhorn::{PotentialPair, SweepRow};

/// Round-trip float formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let row: Vec<String> = fields.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn matrix_headers(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (1..=rows).flat_map(|i| (1..=cols).map(move |j| format!("{prefix}_{i}{j}"))).collect()
}

fn vector_headers(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn matrix_fields(m: &DMatrix<f64>) -> impl Iterator<Item = String> {
    row_major(m).into_iter().map(fmt_f64)
}

/// t, phi_ij, m_ij: Φ(t,0) and M(t,0) at every table node.
pub fn gramian_csv(tbl: &TransitionTable) -> String {
    let n = tbl.dim();
    let mut out = String::new();
    push_row(&mut out, std::iter::once("t".to_string()).chain(matrix_headers("phi", n, n)).chain(matrix_headers("m", n, n)));
    for ((t, phi), m) in tbl.grid().iter().zip(tbl.phi_table()).zip(tbl.gramian_table()) {
        push_row(&mut out, std::iter::once(fmt_f64(*t)).chain(matrix_fields(phi)).chain(matrix_fields(m)));
    }
    out
}

/// t, n_i, sigma_ij, pi_ij: moment flow and feedback gain.
pub fn flow_csv(flow: &MomentFlow, policy: &BridgePolicy) -> String {
    let n = policy.dim();
    let mut out = String::new();
    push_row(
        &mut out,
        std::iter::once("t".to_string())
            .chain(vector_headers("n", n))
            .chain(matrix_headers("sigma", n, n))
            .chain(matrix_headers("pi", n, n)),
    );
    for (k, t) in flow.grid.iter().enumerate() {
        push_row(
            &mut out,
            std::iter::once(fmt_f64(*t))
                .chain(flow.means[k].iter().map(|v| fmt_f64(*v)))
                .chain(matrix_fields(&flow.covs[k]))
                .chain(matrix_fields(&policy.pi_flow()[k])),
        );
    }
    out
}

/// path_id, t, x_i.
pub fn paths_csv(ens: &PathEnsemble) -> String {
    let mut out = String::new();
    push_row(&mut out, ["path_id".to_string(), "t".to_string()].into_iter().chain(vector_headers("x", ens.dim())));
    for (p, path) in ens.paths.iter().enumerate() {
        for (k, t) in ens.times.iter().enumerate() {
            push_row(
                &mut out,
                [p.to_string(), fmt_f64(*t)].into_iter().chain(path.column(k).iter().map(|v| fmt_f64(*v))),
            );
        }
    }
    out
}

/// t, mean_i, cov_ij.
pub fn stats_csv(stats: &EnsembleStats) -> String {
    let n = stats.means.first().map_or(0, |m| m.len());
    let mut out = String::new();
    push_row(
        &mut out,
        std::iter::once("t".to_string()).chain(vector_headers("mean", n)).chain(matrix_headers("cov", n, n)),
    );
    for (k, t) in stats.times.iter().enumerate() {
        push_row(
            &mut out,
            std::iter::once(fmt_f64(*t)).chain(stats.means[k].iter().map(|v| fmt_f64(*v))).chain(matrix_fields(&stats.covs[k])),
        );
    }
    out
}

/// t, x, rho for a sequence of one-time densities.
pub fn density_flow_csv(frames: &[(f64, GridDensity)]) -> String {
    let mut out = String::from("t,x,rho\n");
    for (t, d) in frames {
        for (x, r) in d.points().iter().zip(d.density()) {
            let _ = writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*x), fmt_f64(*r));
        }
    }
    out
}

/// x, T.
pub fn map_csv(map: &TransportMap1D) -> String {
    let mut out = String::from("x,T\n");
    for (x, y) in map.source().iter().zip(map.target()) {
        let _ = writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*y));
    }
    out
}

/// Coupling matrix, one row per source point, no header.
pub fn coupling_csv(c: &DiscreteCoupling) -> String {
    let mut out = String::new();
    for row in c.plan.row_iter() {
        push_row(&mut out, row.iter().map(|v| fmt_f64(*v)));
    }
    out
}

/// side, index, x, log_phi for both potentials (−inf where a point carries
/// no mass).
pub fn potentials_csv(pair: &PotentialPair) -> String {
    let mut out = String::from("side,index,x,log_phi\n");
    for (side, pts, vals) in [("source", &pair.source, &pair.log_phi_hat0), ("target", &pair.target, &pair.log_phi1)] {
        for (i, (x, v)) in pts.iter().zip(vals.iter()).enumerate() {
            let _ = writeln!(out, "{side},{i},{},{}", fmt_f64(*x), fmt_f64(*v));
        }
    }
    out
}

/// iteration, residual.
pub fn trace_csv(pair: &PotentialPair) -> String {
    let mut out = String::from("iteration,residual\n");
    for (i, r) in &pair.trace {
        let _ = writeln!(out, "{i},{}", fmt_f64(*r));
    }
    out
}

/// epsilon, coupling_distance, flow_distance, iterations, residual.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,coupling_distance,flow_distance,iterations,residual\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.epsilon),
            fmt_f64(r.coupling_distance),
            fmt_f64(r.flow_distance),
            r.iterations,
            fmt_f64(r.residual)
        );
    }
    out
}

/// Reads a density table with header columns `x` and `rho` (any order,
/// extra columns ignored).
pub fn parse_density_csv(text: &str) -> Result<GridDensity> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::InvalidInput(format!("density CSV header: {e}")))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidInput(format!("line 1: density CSV needs a '{name}' column")))
    };
    let (ix, ir) = (find("x")?, find("rho")?);
    let mut xs = Vec::new();
    let mut rs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidInput(format!("density CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("line {line}: missing column {}", i + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("line {line}: {e}")))
        };
        xs.push(get(ix)?);
        rs.push(get(ir)?);
    }
    GridDensity::new(xs, rs)
}
