//! The ten-unit ratio-imputation example: fit, residuals, balance target and one
//! exact balanced imputation.

use std::fmt::Write;

use ebri_core::imputation::{balance_target, impute_ebri_detailed, ImputedDataset};
use ebri_core::population::{load_thompson_example, ThompsonExample};
use ebri_core::regression::{fit, FittedModel, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 7;

/// Relative tolerance on the balance identity.
pub const BALANCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct WorkedExample {
    pub seed: u64,
    pub data: ThompsonExample,
    pub fit: FittedModel,
    pub target: f64,
    pub imputed: ImputedDataset,
}

impl WorkedExample {
    pub fn run(seed: u64) -> Result<Self, ebri_core::Error> {
        let data = load_thompson_example();
        let fit = fit(&data.sample, &data.units, &ModelSpec::ratio())?;
        let target = balance_target(&fit, &data.sample);
        let (imputed, _, _) = impute_ebri_detailed(&fit, &data.sample, &mut ChaCha8Rng::seed_from_u64(seed), true)?;
        Ok(WorkedExample { seed, data, fit, target, imputed })
    }

    pub fn achieved(&self) -> f64 {
        self.imputed.achieved_balance()
    }

    pub fn relative_gap(&self) -> f64 {
        (self.achieved() - self.target).abs() / self.target.abs().max(f64::MIN_POSITIVE)
    }

    pub fn balanced(&self) -> bool {
        self.relative_gap() <= BALANCE_TOL
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let f = &self.fit;
        let z1 = self.data.units.z1();
        let n = self.data.sample.len();
        let _ = writeln!(s, "ratio imputation example: N = {}, n = {n}, {} respondents", self.data.sample.population_size, f.respondents.len());
        let _ = writeln!(s, "B_hat = {:.4} ({:.2})", f.b_ar[0], f.b_ar[0]);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>4} {:>7} {:>7} {:>7}", "k", "z1", "y", "e_k");
        for (i, &k) in f.respondents.iter().enumerate() {
            let _ = writeln!(s, "{:>4} {:>7.2} {:>7.2} {:>7.2}", k + 1, z1[k], f.observed[k], f.residuals[i]);
        }
        for k in f.nonrespondents() {
            let _ = writeln!(s, "{:>4} {:>7.2} {:>7} {:>7}", k + 1, z1[k], "-", "-");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "ebar_r = {:.4}", f.ebar_r);
        let _ = writeln!(s, "balance target sum d(1-r) v^1/2 ebar_r = {:.2}", self.target);
        let _ = writeln!(s);
        let _ = writeln!(s, "imputed residuals (seed {}):", self.seed);
        let mut header = format!("{:>4} |", "k");
        for e in &f.residuals {
            let _ = write!(header, " {e:>6.2}");
        }
        let _ = write!(header, " | {:>6} {:>6}", "eps*", "y*");
        let _ = writeln!(s, "{header}");
        for u in &self.imputed.imputed {
            let mut row = format!("{:>4} |", u.position + 1);
            for &l in &f.respondents {
                let w = u.donors.iter().find(|d| d.respondent == l).map_or(0.0, |d| d.weight);
                if w == 0.0 || w == 1.0 {
                    let _ = write!(row, " {:>6}", w as u8);
                } else {
                    let _ = write!(row, " {w:>6.2}");
                }
            }
            let _ = write!(row, " | {:>6.2} {:>6.2}", u.residual, u.value());
            let _ = writeln!(s, "{row}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "achieved sum d(1-r) v^1/2 eps* = {:.2}", self.achieved());
        let _ = writeln!(
            s,
            "balance identity: {} (relative gap {:.1e})",
            if self.balanced() { "holds" } else { "FAILS" },
            self.relative_gap()
        );
        s
    }
}
