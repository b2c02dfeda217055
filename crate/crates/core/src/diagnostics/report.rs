use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    gptq_error_bounds_with, hessian_incoherence_from, layerwise_error, rtn_error_bound_with,
    snr_db, ub_bound, weight_incoherence, Snr,
};
use crate::error::Result;
use crate::linalg::{constrained_ldl, jacobi_eigh, ldl_upper, EigenDecomposition, Matrix, SymmetricPsd};
use crate::quant::gptqs_c;

/// Spectral quantities of one Hessian, shared by every layer that reads it.
#[derive(Clone, Debug)]
pub struct HessianStats {
    pub eig: EigenDecomposition,
    pub tr_h: f64,
    pub tr_d: f64,
    pub ub: f64,
    pub off_diag_sq: f64,
}

impl HessianStats {
    pub fn compute(h: &SymmetricPsd) -> Result<Self> {
        Ok(HessianStats {
            eig: jacobi_eigh(h)?,
            tr_h: h.trace(),
            tr_d: ldl_upper(h)?.trace_d(),
            ub: ub_bound(h)?,
            off_diag_sq: h.off_diag_sq(),
        })
    }
}

/// Per-layer diagnostics row. Column order of the CSV export follows the
/// field order here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub layer: usize,
    pub role: String,
    pub rows: usize,
    pub cols: usize,
    pub mu_w: f64,
    pub mu_h: f64,
    pub mu_h_degenerate: bool,
    pub w_max: f64,
    pub frob_sq: f64,
    pub tr_h: f64,
    pub tr_d: f64,
    pub ub: f64,
    pub off_diag_sq: f64,
    pub rtn_bound: f64,
    /// The three GPTQS bounds are only defined for `bits >= 3`.
    pub gptq_trace_bound: Option<f64>,
    pub gptq_ub_bound: Option<f64>,
    pub gptq_incoherence_bound: Option<f64>,
    pub actual_error: f64,
    pub snr_db: Snr,
}

impl BoundReport {
    /// Diagnostics of quantizing `w` to `w_hat` under `h`, with the GPTQS
    /// bounds at failure probability `delta`.
    pub fn compute(
        layer: usize,
        role: &str,
        w: &Matrix,
        w_hat: &Matrix,
        h: &SymmetricPsd,
        bits: u8,
        delta: f64,
    ) -> Result<Self> {
        let stats = HessianStats::compute(h)?;
        BoundReport::compute_with(layer, role, w, w_hat, h, &stats, bits, delta)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn compute_with(
        layer: usize,
        role: &str,
        w: &Matrix,
        w_hat: &Matrix,
        h: &SymmetricPsd,
        stats: &HessianStats,
        bits: u8,
        delta: f64,
    ) -> Result<Self> {
        let inc = hessian_incoherence_from(&stats.eig, stats.tr_h);
        let gptq = if bits >= 3 {
            let c = gptqs_c(w.rows(), w.cols(), delta)?;
            let l = constrained_ldl(h, c)?;
            Some(gptq_error_bounds_with(w, h, &l, &stats.eig, bits, delta)?)
        } else {
            None
        };
        let signal_free = w.frobenius_sq() == 0.0;
        Ok(BoundReport {
            layer,
            role: role.to_string(),
            rows: w.rows(),
            cols: w.cols(),
            mu_w: weight_incoherence(w)?,
            mu_h: inc.mu_h,
            mu_h_degenerate: inc.degenerate,
            w_max: w.max_abs(),
            frob_sq: w.frobenius_sq(),
            tr_h: stats.tr_h,
            tr_d: stats.tr_d,
            ub: stats.ub,
            off_diag_sq: stats.off_diag_sq,
            rtn_bound: rtn_error_bound_with(w, stats.eig.lambda_max(), bits)?,
            gptq_trace_bound: gptq.map(|b| b.trace_bound),
            gptq_ub_bound: gptq.map(|b| b.ub_bound),
            gptq_incoherence_bound: gptq.map(|b| b.incoherence_bound),
            actual_error: layerwise_error(w, w_hat, h)?,
            snr_db: if signal_free { Snr::Exact } else { snr_db(w, w_hat, h)? },
        })
    }
}

pub fn write_reports_csv(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in reports {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<BoundReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_reports_json(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, reports)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{gptq_quantize, QuantConfig};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn report_invariants_and_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::gaussian(64, 16, 1.0, &mut rng);
        let h = SymmetricPsd::new(x.t_matmul(&x).scale(1.0 / 64.0)).unwrap();
        let w = Matrix::gaussian(8, 16, 1.0, &mut rng);
        let q = gptq_quantize(&w, &h, &QuantConfig::nearest(4)).unwrap();
        let r = BoundReport::compute(2, "q", &w, &q.dequantized, &h, 4, 0.1).unwrap();
        assert!(r.mu_w >= 1.0 && r.mu_h >= 1.0 - 1e-12);
        assert!(r.ub <= r.tr_h && r.tr_d <= 2.0 * r.ub && r.tr_d <= r.tr_h);
        assert!(r.actual_error >= 0.0);
        assert!(r.gptq_trace_bound.unwrap() <= r.gptq_ub_bound.unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.csv");
        write_reports_csv(&path, std::slice::from_ref(&r)).unwrap();
        let back = read_reports_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].role, "q");
        assert_eq!(back[0].tr_h, r.tr_h);

        let low = BoundReport::compute(0, "k", &w, &w, &h, 2, 0.1).unwrap();
        assert!(low.gptq_trace_bound.is_none());
        assert_eq!(low.snr_db, Snr::Exact);
    }
}
