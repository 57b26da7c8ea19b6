//! Loss and disparity functionals, episode value accounting, and the
//! regret/distortion ledger.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::OutcomeRates;
use crate::types::StepRecord;

/// `𝓛 = 1 - α·tp - β·tn`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub alpha: f64,
    pub beta: f64,
    /// Use `1 - α·tp + β·tn` instead, clipped to `[0, 1]`.
    #[serde(default)]
    pub printed_sign: bool,
}

impl LossSpec {
    /// `𝓛 = 1 - tp`.
    pub fn true_positive() -> Self {
        LossSpec {
            alpha: 1.0,
            beta: 0.0,
            printed_sign: false,
        }
    }

    /// Zero-one loss, `𝓛 = 1 - tp - tn`.
    pub fn zero_one() -> Self {
        LossSpec {
            alpha: 1.0,
            beta: 1.0,
            printed_sign: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in [self.alpha, self.beta] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config(format!("loss weight {w} outside [0, 1]")));
            }
        }
        // Zero-one loss is the one admissible case with α + β = 2: tp + tn ≤ 1.
        let zero_one = self.alpha == 1.0 && self.beta == 1.0;
        if !self.printed_sign && !zero_one && self.alpha + self.beta > 1.0 {
            return Err(Error::config(format!(
                "alpha + beta = {} exceeds 1",
                self.alpha + self.beta
            )));
        }
        Ok(())
    }
}

/// Instantaneous loss in `[0, 1]`.
pub fn loss(spec: &LossSpec, rates: &OutcomeRates) -> f64 {
    let (tp, tn) = (rates.tp(), rates.tn());
    let value = if spec.printed_sign {
        1.0 - spec.alpha * tp + spec.beta * tn
    } else {
        1.0 - spec.alpha * tp - spec.beta * tn
    };
    value.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisparityKind {
    /// Demographic parity: `Pr(Ŷ=1 | G=g)`.
    DP,
    /// Equal opportunity: `Pr(Ŷ=1 | Y=1, G=g)`.
    EOp,
    /// Equalized odds: both label-conditional acceptance rates.
    EO,
    /// Qualification-rate parity: `Pr(Y=1 | G=g)`.
    QR,
}

impl DisparityKind {
    pub const ALL: [DisparityKind; 4] = [
        DisparityKind::DP,
        DisparityKind::EOp,
        DisparityKind::EO,
        DisparityKind::QR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DisparityKind::DP => "DP",
            DisparityKind::EOp => "EOp",
            DisparityKind::EO => "EO",
            DisparityKind::QR => "QR",
        }
    }
}

impl std::str::FromStr for DisparityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DisparityKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown disparity `{s}`")))
    }
}

fn half_sq_gap(a: f64, b: f64) -> f64 {
    (a - b).powi(2) / 2.0
}

/// Squared between-group gap of the statistic selected by `kind`, halved.
pub fn disparity(kind: DisparityKind, rates: &OutcomeRates) -> Result<f64> {
    let [g1, g2] = rates.groups.as_slice() else {
        return Err(Error::Unsupported(format!(
            "disparity needs exactly two groups, got {}",
            rates.groups.len()
        )));
    };
    let value = match kind {
        DisparityKind::DP => half_sq_gap(g1.acceptance(), g2.acceptance()),
        DisparityKind::EOp => half_sq_gap(g1.conditional.tpr, g2.conditional.tpr),
        DisparityKind::EO => {
            half_sq_gap(g1.conditional.tpr, g2.conditional.tpr)
                + half_sq_gap(g1.conditional.fpr, g2.conditional.fpr)
        }
        DisparityKind::QR => half_sq_gap(g1.qualification, g2.qualification),
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Realized `(V_r, V_g)` of one episode.
pub fn episode_values(trace: &[StepRecord]) -> Result<(f64, f64)> {
    if trace.is_empty() {
        return Err(Error::validation("episode trace is empty"));
    }
    Ok(trace
        .iter()
        .fold((0.0, 0.0), |(r, g), s| (r + s.reward, g + s.utility)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub episode: usize,
    pub value_r: f64,
    pub value_g: f64,
    pub oracle: Option<f64>,
    pub regret_cum: f64,
    pub distortion_cum: f64,
}

/// Episodic regret against an oracle value and distortion against the
/// constraint level.
///
/// Distortion clips the running sum of `c̃ - V_g` at zero after summation, so
/// surplus utility in one episode offsets shortfall in another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub constraint_level: f64,
    pub rows: Vec<LedgerRow>,
    regret_sum: f64,
    slack_sum: f64,
}

impl RegretLedger {
    pub fn new(constraint_level: f64) -> Self {
        RegretLedger {
            constraint_level,
            rows: Vec::new(),
            regret_sum: 0.0,
            slack_sum: 0.0,
        }
    }

    pub fn regret(&self) -> f64 {
        self.regret_sum
    }

    pub fn distortion(&self) -> f64 {
        self.slack_sum.max(0.0)
    }

    pub fn episodes(&self) -> usize {
        self.rows.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "V_r", "V_g", "oracle", "regret_cum", "distortion_cum"])?;
        for row in &self.rows {
            w.write_record([
                row.episode.to_string(),
                format!("{:.12}", row.value_r),
                format!("{:.12}", row.value_g),
                row.oracle.map(|o| format!("{o:.12}")).unwrap_or_default(),
                format!("{:.12}", row.regret_cum),
                format!("{:.12}", row.distortion_cum),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ledger>", e))?;
        Ok(())
    }
}

/// Append one episode: `value_r`/`value_g` are the policy's values at the
/// episode's initial state, `oracle` the constrained optimum there.
pub fn update_ledger(ledger: &mut RegretLedger, value_r: f64, value_g: f64, oracle: Option<f64>) {
    if let Some(best) = oracle {
        ledger.regret_sum += best - value_r;
    }
    ledger.slack_sum += ledger.constraint_level - value_g;
    let row = LedgerRow {
        episode: ledger.rows.len() + 1,
        value_r,
        value_g,
        oracle,
        regret_cum: ledger.regret_sum,
        distortion_cum: ledger.distortion(),
    };
    ledger.rows.push(row);
}
