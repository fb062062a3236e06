//! Dimension-budget privacy comparison and client-side cost accounting.
//!
//! Federated learning reveals `N_w / n_c` scalars per local sample (the
//! model update spread over the client's data), split learning reveals the
//! `d` cut-layer activations of every sample. Labels are not counted.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{count_params, estimate_flops};
use crate::protocol::SplitSpec;

/// Per-sample dimensions revealed to the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimsPerSample {
    pub fl: f64,
    pub sl: u64,
}

pub fn dims_per_sample(n_w: u64, n_c: u64, d: u64) -> Result<DimsPerSample> {
    if n_c == 0 {
        return Err(Error::Argument("local sample count n_c must be positive".into()));
    }
    if d == 0 {
        return Err(Error::Argument("smashed dimension d must be positive".into()));
    }
    Ok(DimsPerSample {
        fl: n_w as f64 / n_c as f64,
        sl: d,
    })
}

/// `floor(N_w / d)`: the local data size at which both budgets meet.
pub fn min_data_size(n_w: u64, d: u64) -> Result<u64> {
    if d == 0 {
        return Err(Error::Argument("smashed dimension d must be positive".into()));
    }
    Ok(n_w / d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub n_w: u64,
    /// Whether `n_w` was supplied rather than counted from the model.
    pub n_w_overridden: bool,
    pub d: u64,
    pub n_c: u64,
    pub dims_per_sample_fl: f64,
    pub dims_per_sample_sl: u64,
    pub min_data_size: u64,
}

impl PrivacyReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let source = if self.n_w_overridden { "given" } else { "counted" };
        let _ = writeln!(s, "{:<28}{:>16}", "quantity", "value");
        let _ = writeln!(s, "{:<28}{:>16}", format!("N_w ({source})"), self.n_w);
        let _ = writeln!(s, "{:<28}{:>16}", "d", self.d);
        let _ = writeln!(s, "{:<28}{:>16}", "n_c", self.n_c);
        let _ = writeln!(s, "{:<28}{:>16.3}", "dims/sample (FL)", self.dims_per_sample_fl);
        let _ = writeln!(s, "{:<28}{:>16}", "dims/sample (SL)", self.dims_per_sample_sl);
        let _ = writeln!(s, "{:<28}{:>16}", "min data size", self.min_data_size);
        s
    }
}

/// Privacy budget of `split` for a client holding `n_c` samples. `N_w` is the
/// full model's trainable count unless `n_w_override` is given.
pub fn analyze(split: &SplitSpec, n_c: u64, n_w_override: Option<u64>) -> Result<PrivacyReport> {
    let n_w = n_w_override.unwrap_or(split.model.param_count() as u64);
    let d = split.smashed_dim as u64;
    let dims = dims_per_sample(n_w, n_c, d)?;
    Ok(PrivacyReport {
        n_w,
        n_w_overridden: n_w_override.is_some(),
        d,
        n_c,
        dims_per_sample_fl: dims.fl,
        dims_per_sample_sl: dims.sl,
        min_data_size: min_data_size(n_w, d)?,
    })
}

/// `(n_c, FL dims, SL dims)` for each local size, the budget-versus-size
/// curve.
pub fn budget_curve(n_w: u64, d: u64, sizes: &[u64]) -> Result<Vec<(u64, f64, u64)>> {
    sizes
        .iter()
        .map(|&n| dims_per_sample(n_w, n, d).map(|b| (n, b.fl, b.sl)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EfficiencyRow {
    pub role: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub client: EfficiencyRow,
    pub full: EfficiencyRow,
    /// `1 - client / full`.
    pub param_reduction: f64,
    pub flop_reduction: f64,
}

impl EfficiencyReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10}{:>14}{:>16}", "role", "params", "flops");
        for r in [&self.client, &self.full] {
            let _ = writeln!(s, "{:<10}{:>14}{:>16}", r.role, r.params, r.flops);
        }
        let _ = writeln!(
            s,
            "{:<10}{:>13.2}%{:>15.2}%",
            "saved",
            100.0 * self.param_reduction,
            100.0 * self.flop_reduction
        );
        s
    }
}

/// Parameters and forward FLOPs per sample of the client prefix against
/// the whole model.
pub fn efficiency_report(split: &SplitSpec) -> Result<EfficiencyReport> {
    let input = &split.model.input_shape;
    let row = |role: &str, layers| -> Result<EfficiencyRow> {
        Ok(EfficiencyRow {
            role: role.into(),
            params: count_params(layers) as u64,
            flops: estimate_flops(layers, input)?,
        })
    };
    let client = row("client", split.client_layers())?;
    let full = row("full", &split.model.layers)?;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { 1.0 - a as f64 / b as f64 };
    Ok(EfficiencyReport {
        param_reduction: ratio(client.params, full.params),
        flop_reduction: ratio(client.flops, full.flops),
        client,
        full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use crate::protocol::split_model;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(dims_per_sample(100, 10, 5).unwrap(), DimsPerSample { fl: 10.0, sl: 5 });
        assert_eq!(dims_per_sample(77, 77, 3).unwrap().fl, 1.0);
        assert_eq!(dims_per_sample(235_225, 2304, 2304).unwrap().fl.round(), 102.0);
        assert_eq!(min_data_size(23_000_000, 512).unwrap(), 44_921);
        assert!(matches!(dims_per_sample(1, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(dims_per_sample(1, 1, 0), Err(Error::Argument(_))));
        assert!(matches!(min_data_size(1, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn break_even_for_the_dense_split() {
        let split = split_model(&ModelSpec::mlp_2808().unwrap(), 1).unwrap();
        let r = analyze(&split, 2907, Some(186_049)).unwrap();
        assert_eq!(r.min_data_size, 2907);
        assert!((r.dims_per_sample_fl - 64.0).abs() < 0.01);
        let own = analyze(&split, 1, None).unwrap();
        assert_eq!(own.dims_per_sample_fl, split.model.param_count() as f64);
        assert!(!own.n_w_overridden);
        assert!(r.table().contains("given"));
    }

    #[test]
    fn image_client_saves_about_99_percent_of_parameters() {
        let split = split_model(&ModelSpec::image_conv(3, 28, 9).unwrap(), ModelSpec::IMAGE_CUT).unwrap();
        let e = efficiency_report(&split).unwrap();
        assert_eq!(e.client.params, 2832);
        assert!(e.client.params <= e.full.params && e.client.flops <= e.full.flops);
        assert!((e.param_reduction - 0.99).abs() <= 0.05, "{}", e.param_reduction);
        assert_eq!(e.table().lines().count(), 4);
    }

    proptest! {
        #[test]
        fn min_data_size_brackets_the_ratio(n_w in 0u64..10_000_000, d in 1u64..100_000) {
            let m = min_data_size(n_w, d).unwrap();
            prop_assert!(m * d <= n_w && n_w < (m + 1) * d);
        }

        #[test]
        fn fl_budget_times_size_recovers_n_w(n_w in 0u64..1u64 << 40, n_c in 1u64..1u64 << 30) {
            let fl = dims_per_sample(n_w, n_c, 1).unwrap().fl;
            let (back, exact) = (fl * n_c as f64, n_w as f64);
            let ulp = f64::from_bits(exact.to_bits() + 1) - exact;
            prop_assert!((back - exact).abs() <= ulp);
        }

        #[test]
        fn budgets_cross_at_min_data_size(n_w in 1u64..1_000_000, d in 1u64..5_000, n_c in 1u64..10_000) {
            let m = min_data_size(n_w, d).unwrap();
            let b = dims_per_sample(n_w, n_c, d).unwrap();
            let b_next = dims_per_sample(n_w, n_c + 1, d).unwrap();
            prop_assert!(b_next.fl < b.fl);
            prop_assert_eq!(b_next.sl, b.sl);
            if n_c > m {
                prop_assert!(b.fl < d as f64);
            }
            if n_c < m {
                prop_assert!(b.fl > d as f64);
            }
        }
    }
}
