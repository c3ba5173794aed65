use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ntk_core::analytic::{ArchSpec, KernelKind};
use ntk_core::empirical::{Activation, NetSpec, Parameterization};
use ntk_core::solvers::NumericLoss;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Fc,
    Conv1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamArg {
    Ntk,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Ntk,
    Nngp,
    Empirical,
    Nth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Square,
    Bce,
    Xent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    Relu,
    Softplus,
    Tanh,
}

/// Kernel whose circle spectrum `spectrum` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKernel {
    /// K(t) = t.
    Linear,
    Ntk,
    Nngp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingArg {
    Basic,
    Positional,
    Gaussian,
}

/// Every tunable of a run. The same struct is read from the JSON config and
/// from the command line; a flag that is present wins.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Training inputs: headerless CSV, one sample per row.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Training labels: single-column CSV (class indices for xent).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Inputs to predict on.
    #[arg(long, global = true)]
    pub inputs: Option<PathBuf>,
    /// NTKS model file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Precomputed NTKG Gram file.
    #[arg(long, global = true)]
    pub gram: Option<PathBuf>,

    #[arg(long, global = true)]
    pub arch_depth: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub arch_kind: Option<ArchKind>,
    /// Convolution tap offsets, e.g. "-1,0,1".
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub ker: Option<Vec<isize>>,
    /// Channels per pixel for conv1d; the pixel count is the row length
    /// divided by this.
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub param: Option<ParamArg>,
    #[arg(long, global = true, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, global = true, value_enum)]
    pub activation: Option<ActivationArg>,

    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub nystrom_m: Option<usize>,
    #[arg(long, global = true)]
    pub cg_iters: Option<usize>,
    #[arg(long, global = true)]
    pub cg_tol: Option<f64>,

    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub loss: Option<LossArg>,

    /// Number of random initializations.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,

    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mem_budget_mb: Option<u64>,

    #[arg(long, global = true, value_enum)]
    pub spectral_kernel: Option<SpectralKernel>,
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    #[arg(long, global = true)]
    pub nodes: Option<usize>,

    #[arg(long, global = true, value_enum)]
    pub embedding: Option<EmbeddingArg>,
    /// Frequencies per coordinate of the positional encoding.
    #[arg(long, global = true)]
    pub embed_m: Option<usize>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Rows of the Gaussian frequency matrix.
    #[arg(long, global = true)]
    pub rows: Option<usize>,

    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_m: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_d: Option<Vec<usize>>,
    /// Dataset size of the pixel sweep.
    #[arg(long, global = true)]
    pub points: Option<usize>,
}

macro_rules! overlay {
    ($flags:ident, $file:ident, $($f:ident),* $(,)?) => {
        Settings { $($f: $flags.$f.or($file.$f)),* }
    };
}

impl Settings {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over `file`.
    pub fn over(self, file: Settings) -> Settings {
        let flags = self;
        overlay!(
            flags, file, dataset, labels, inputs, model, gram, arch_depth, arch_kind, ker, channels, param, kind,
            activation, lambda, nystrom_m, cg_iters, cg_tol, eta, steps, loss, seeds, seed, widths, out,
            mem_budget_mb, spectral_kernel, k_max, nodes, embedding, embed_m, sigma, rows, sweep_m, sweep_d, points,
        )
    }

    pub fn depth(&self) -> usize {
        self.arch_depth.unwrap_or(3)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(1e-2)
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(1000)
    }

    pub fn loss(&self) -> LossArg {
        self.loss.unwrap_or(LossArg::Square)
    }

    pub fn seeds(&self) -> usize {
        self.seeds.unwrap_or(1)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.widths.clone().unwrap_or_else(|| vec![256])
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn kind(&self) -> KernelKind {
        match self.kind.unwrap_or(KindArg::Ntk) {
            KindArg::Ntk => KernelKind::Ntk,
            KindArg::Nngp => KernelKind::Nngp,
            KindArg::Empirical => KernelKind::Empirical,
            KindArg::Nth => KernelKind::Nth,
        }
    }

    pub fn mem_budget_bytes(&self) -> Option<u64> {
        self.mem_budget_mb.map(|mb| mb.saturating_mul(1 << 20))
    }

    /// Range checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Config(what.to_string()));
        if self.depth() == 0 {
            return bad("arch_depth must be at least 1");
        }
        if !(self.lambda() >= 0.0) || !self.lambda().is_finite() {
            return bad("lambda must be a finite nonnegative number");
        }
        if self.cg_tol.is_some_and(|t| !(t > 0.0)) {
            return bad("cg_tol must be positive");
        }
        if !(self.eta() >= 0.0) || !self.eta().is_finite() {
            return bad("eta must be a finite nonnegative number");
        }
        if self.seeds() == 0 {
            return bad("seeds must be at least 1");
        }
        if self.widths().is_empty() || self.widths().contains(&0) {
            return bad("widths must be positive");
        }
        if self.channels == Some(0) {
            return bad("channels must be positive");
        }
        if self.ker.as_ref().is_some_and(|k| k.is_empty()) {
            return bad("ker must list at least one offset");
        }
        if self.sigma.is_some_and(|s| !(s >= 0.0)) {
            return bad("sigma must be nonnegative");
        }
        Ok(())
    }

    /// Architecture for samples of length `len`.
    pub fn arch(&self, len: usize) -> Result<ArchSpec, CliError> {
        let arch = match self.arch_kind.unwrap_or(ArchKind::Fc) {
            ArchKind::Fc => ArchSpec::fc(len, self.depth()),
            ArchKind::Conv1d => {
                let c = self.channels.unwrap_or(1);
                if !len.is_multiple_of(c) {
                    return Err(CliError::Config(format!("rows of length {len} do not split into {c} channels")));
                }
                let ker = self.ker.clone().unwrap_or_else(|| vec![-1, 0, 1]);
                ArchSpec::conv1d(c, len / c, &ker, self.depth())
            }
        };
        arch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(arch)
    }

    pub fn net_spec(&self, width: usize, default_activation: Activation) -> NetSpec {
        let param = match self.param.unwrap_or(ParamArg::Ntk) {
            ParamArg::Ntk => Parameterization::Ntk,
            ParamArg::Standard => Parameterization::Standard,
        };
        let act = match self.activation {
            None => default_activation,
            Some(ActivationArg::Relu) => Activation::Relu,
            Some(ActivationArg::Softplus) => Activation::SMOOTH_RELU,
            Some(ActivationArg::Tanh) => Activation::Tanh,
        };
        NetSpec::new(width).param(param).activation(act)
    }

    pub fn numeric_loss(&self) -> NumericLoss {
        match self.loss() {
            LossArg::Square => NumericLoss::Square,
            LossArg::Bce => NumericLoss::Bce,
            LossArg::Xent => NumericLoss::SoftmaxXent,
        }
    }
}
