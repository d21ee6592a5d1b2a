use std::path::PathBuf;

use kobalab::params::GrowthRule;
use serde::Serialize;

/// Test hook that forces failure paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Perturb {
    /// Negate every `ρ_k`.
    RhoSign,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub n_max: usize,
    pub precision_bits: usize,
    pub quad: usize,
    /// Nodes per axis of the Levi-constant grid (doubled for the stability check).
    pub grid: usize,
    pub directions: usize,
    pub seed: u64,
    pub a_rule: String,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Perturb>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_max: 4,
            precision_bits: 512,
            quad: 64,
            grid: 8,
            directions: 16,
            seed: 0,
            a_rule: GrowthRule::default().to_string(),
            out: PathBuf::from("."),
            perturb: None,
        }
    }
}

impl RunConfig {
    pub fn rule(&self) -> kobalab::Result<GrowthRule> {
        GrowthRule::parse(&self.a_rule)
    }
}
