//! Scale algebra: `beta`, `gamma`, regime classification, admissibility windows
//! and the leading-order (slope) predictors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance used to decide `eta == d/2`.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Default bound on the window ratios.
pub const DEFAULT_WINDOW_RATIO: f64 = 0.1;

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, "must be positive and finite"))
    }
}

/// `beta = (t / alpha^(d+2))^(1/(1+eta))`.
pub fn beta(t: f64, alpha: f64, eta: f64, d: usize) -> f64 {
    (t / alpha.powi(d as i32 + 2)).powf(1.0 / (1.0 + eta))
}

/// `gamma = t^(eta/(1+eta)) alpha^((d - 2 eta)/(1+eta))`.
pub fn gamma(t: f64, alpha: f64, eta: f64, d: usize) -> f64 {
    t.powf(eta / (1.0 + eta)) * alpha.powf((d as f64 - 2.0 * eta) / (1.0 + eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub eta: f64,
    #[serde(rename = "D")]
    pub tail_constant: f64,
    pub d: usize,
    pub t: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub beta: f64,
    pub gamma: f64,
    /// `beta <= 1`: the inputs are outside the asymptotic window.
    pub outside_window: bool,
}

impl ScalingParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("eta", self.eta)?;
        check_positive("D", self.tail_constant)?;
        check_positive("t", self.t)?;
        check_positive("alpha", self.alpha)?;
        if self.d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        Ok(())
    }

    pub fn scales(&self) -> Result<Scales> {
        self.validate()?;
        let b = beta(self.t, self.alpha, self.eta, self.d);
        Ok(Scales {
            beta: b,
            gamma: gamma(self.t, self.alpha, self.eta, self.d),
            outside_window: b <= 1.0,
        })
    }

    /// `(1 + 1/eta) (D eta)^(1/(1+eta))`.
    pub fn rate_constant(&self) -> f64 {
        (1.0 + 1.0 / self.eta) * (self.tail_constant * self.eta).powf(1.0 / (1.0 + self.eta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SpreadOut,
    Critical,
    Confined,
}

/// Whether a variational constant is known to vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    Positive,
    Zero,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub eta: f64,
    pub d: usize,
    pub regime: Regime,
    /// `p = 2 eta / (1 + eta)`.
    pub p: f64,
    pub chi_d_lattice: Positivity,
    pub chi_c: Positivity,
    /// The continuum problem on a bounded domain has a minimiser.
    pub continuum_minimizer: bool,
    /// `d = 1` with `eta < 1`: spread-out but `p < 1`, so the energy is not convex.
    pub nonconvex_energy: bool,
}

fn regime_of(eta: f64, d: usize) -> Regime {
    let half = d as f64 / 2.0;
    if (eta - half).abs() <= CRITICAL_TOLERANCE * half {
        Regime::Critical
    } else if eta > half {
        Regime::SpreadOut
    } else {
        Regime::Confined
    }
}

pub fn classify_regime(eta: f64, d: usize) -> Result<RegimeReport> {
    check_positive("eta", eta)?;
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    let regime = regime_of(eta, d);
    let p = 2.0 * eta / (1.0 + eta);
    Ok(RegimeReport {
        eta,
        d,
        regime,
        p,
        chi_d_lattice: if d > 1 { Positivity::Positive } else { Positivity::Zero },
        chi_c: match regime {
            Regime::SpreadOut => Positivity::Positive,
            Regime::Critical => Positivity::Undetermined,
            Regime::Confined => Positivity::Zero,
        },
        continuum_minimizer: regime == Regime::SpreadOut,
        nonconvex_energy: p < 1.0,
    })
}

/// Regime from the energy exponent `p in (0, 2]`; `p = 2` is the `eta = ∞` limit.
pub fn classify_regime_p(p: f64, d: usize) -> Regime {
    if p >= 2.0 {
        return Regime::SpreadOut;
    }
    regime_of(p / (2.0 - p), d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub regime: Regime,
    /// `alpha^(d+2) (log t)^((1+eta)/eta) / t` when spread-out, `alpha / t^(eta/(d(eta+1)))` otherwise.
    pub upper_ratio: f64,
    /// `1 / alpha`.
    pub lower_ratio: f64,
    pub threshold: f64,
    pub upper_pass: bool,
    pub lower_pass: bool,
}

impl WindowDiagnostics {
    pub fn pass(&self) -> bool {
        self.upper_pass && self.lower_pass
    }
}

pub fn admissible_alpha(t: f64, alpha: f64, eta: f64, d: usize, regime: Regime, threshold: f64) -> Result<WindowDiagnostics> {
    check_positive("t", t)?;
    check_positive("alpha", alpha)?;
    check_positive("eta", eta)?;
    check_positive("threshold", threshold)?;
    let upper_ratio = match regime {
        Regime::SpreadOut => alpha.powi(d as i32 + 2) * t.ln().max(0.0).powf((1.0 + eta) / eta) / t,
        Regime::Critical | Regime::Confined => alpha / t.powf(eta / (d as f64 * (eta + 1.0))),
    };
    let lower_ratio = 1.0 / alpha;
    Ok(WindowDiagnostics {
        regime,
        upper_ratio,
        lower_ratio,
        threshold,
        upper_pass: upper_ratio <= threshold,
        lower_pass: lower_ratio <= threshold,
    })
}

/// Variational input for the non-exit predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChiInput {
    Continuum { chi_c: f64 },
    Discrete { chi_d_box: f64, chi_d_lattice: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NonExitPrediction {
    /// `log P ≈ rate`, with `rate = -gamma K chi^c`; `scale` is `gamma`.
    SpreadOut { scale: f64, rate: f64 },
    /// `lower <= log P / scale <= upper` with `scale = t^(eta/(eta+1))`.
    Bracket { regime: Regime, scale: f64, lower: f64, upper: f64 },
}

/// Leading-order slope predictor for `log P(supp ℓ_t ⊂ B_t)`.
pub fn nonexit_predictor(params: &ScalingParams, chi: ChiInput) -> Result<NonExitPrediction> {
    params.validate()?;
    let k = params.rate_constant();
    let regime = regime_of(params.eta, params.d);
    match (regime, chi) {
        (Regime::SpreadOut, ChiInput::Continuum { chi_c }) => {
            let g = gamma(params.t, params.alpha, params.eta, params.d);
            Ok(NonExitPrediction::SpreadOut {
                scale: g,
                rate: -g * k * chi_c,
            })
        }
        (Regime::Critical | Regime::Confined, ChiInput::Discrete { chi_d_box, chi_d_lattice }) => {
            if chi_d_box < chi_d_lattice {
                return Err(invalid("chi_d_box", "the box value cannot be below the lattice value"));
            }
            let lower = if regime == Regime::Critical { -k * chi_d_lattice } else { -k * chi_d_box };
            Ok(NonExitPrediction::Bracket {
                regime,
                scale: params.t.powf(params.eta / (params.eta + 1.0)),
                lower,
                upper: -k * chi_d_lattice,
            })
        }
        (regime, chi) => Err(Error::RegimeMismatch(format!(
            "eta = {} in d = {} is {:?}, which does not take {:?}",
            params.eta, params.d, regime, chi
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifshitzPrediction {
    /// Tail exponent `eta + s` in `log Pr(lambda <= eps^(1-s)) ≈ constant eps^(-(eta+s))`.
    pub exponent: f64,
    pub constant: f64,
    /// Exponent of the box scale `alpha = t^(s / |d - 2 eta|)`.
    pub alpha_exponent: f64,
}

/// `-(chi^c/eta)^(eta+1) (1-s)^(1-s) (eta+s)^(eta+s)` for `s in (0, |d - 2 eta|/(d+2))`.
pub fn lifshitz_predictor(eta: f64, d: usize, s: f64, chi_c: f64) -> Result<LifshitzPrediction> {
    check_positive("eta", eta)?;
    check_positive("chi_c", chi_c)?;
    if regime_of(eta, d) != Regime::SpreadOut {
        return Err(Error::RegimeMismatch(format!("needs eta > d/2, got eta = {eta}, d = {d}")));
    }
    let gap = (d as f64 - 2.0 * eta).abs();
    let s_max = gap / (d as f64 + 2.0);
    if !(s > 0.0 && s < s_max) {
        return Err(invalid("s", format!("must lie in (0, {s_max})")));
    }
    Ok(LifshitzPrediction {
        exponent: eta + s,
        constant: -(chi_c / eta).powf(eta + 1.0) * (1.0 - s).powf(1.0 - s) * (eta + s).powf(eta + s),
        alpha_exponent: s / gap,
    })
}
