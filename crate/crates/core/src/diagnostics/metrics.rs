use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, SymmetricPsd};

/// `tr(E H Eᵀ)` for `E = Ŵ − W`, the expected squared output error when
/// `H = E[xxᵀ]`.
pub fn layerwise_error(w: &Matrix, w_hat: &Matrix, h: &SymmetricPsd) -> Result<f64> {
    if w.shape() != w_hat.shape() {
        return Err(Error::dims(format!(
            "weight {:?} vs quantized {:?}",
            w.shape(),
            w_hat.shape()
        )));
    }
    let e = w_hat.sub(w);
    quadratic_trace(&e, h)
}

/// `tr(A H Aᵀ)`, clamped at zero against round-off.
pub(crate) fn quadratic_trace(a: &Matrix, h: &SymmetricPsd) -> Result<f64> {
    if a.cols() != h.dim() {
        return Err(Error::dims(format!(
            "matrix with {} columns against a Hessian of dimension {}",
            a.cols(),
            h.dim()
        )));
    }
    let ah = a.matmul(h.matrix());
    let total: f64 = a.rows_iter().zip(ah.rows_iter()).map(|(x, y)| dot(x, y)).sum();
    Ok(total.max(0.0))
}

/// Signal-to-noise ratio in dB; exact reconstructions get their own marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Exact,
    Db(f64),
}

impl Snr {
    /// Numeric value, with `Exact` as `+∞`.
    pub fn value(&self) -> f64 {
        match self {
            Snr::Exact => f64::INFINITY,
            Snr::Db(v) => *v,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Snr::Exact)
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Exact => f.write_str("exact"),
            Snr::Db(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Exact => s.serialize_str("exact"),
            Snr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Snr::Db(v)),
            Repr::Text(t) if t == "exact" => Ok(Snr::Exact),
            Repr::Text(t) => t
                .parse()
                .map(Snr::Db)
                .map_err(|_| serde::de::Error::custom(format!("invalid SNR value {t:?}"))),
        }
    }
}

/// `10·log10(tr(W H Wᵀ) / tr(E H Eᵀ))`.
pub fn snr_db(w: &Matrix, w_hat: &Matrix, h: &SymmetricPsd) -> Result<Snr> {
    let signal = quadratic_trace(w, h)?;
    if signal <= 0.0 {
        return Err(Error::Degenerate("SNR of a layer with zero signal".into()));
    }
    let noise = layerwise_error(w, w_hat, h)?;
    if noise == 0.0 {
        return Ok(Snr::Exact);
    }
    Ok(Snr::Db(10.0 * (signal / noise).log10()))
}

/// Sum of layerwise errors over `(W, Ŵ, H)` triples.
pub fn kl_proxy<'a, I>(layers: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Matrix, &'a Matrix, &'a SymmetricPsd)>,
{
    layers
        .into_iter()
        .try_fold(0.0, |acc, (w, w_hat, h)| Ok(acc + layerwise_error(w, w_hat, h)?))
}
