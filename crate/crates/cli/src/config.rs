//! Flat key-value run configuration: a TOML file overlaid by command-line
//! flags, resolved against defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use helipatch_core::patch::{ResolutionRule, SolveOptions};
use helipatch_core::transport::{Scheme, StabilitySettings};
use helipatch_core::helical_coeff::rotate;
use helipatch_core::{HelixParams, Point};

use crate::error::CliError;

/// Every tunable; unset keys take the defaults of [`Settings`].
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Helix pitch k.
    #[arg(long, global = true)]
    pub k: Option<f64>,
    /// Circulation d.
    #[arg(long, global = true)]
    pub d: Option<f64>,
    /// Target radius r*.
    #[arg(long, global = true, alias = "rstar")]
    #[serde(alias = "rstar")]
    pub r_star: Option<f64>,
    /// Pipe radius R*.
    #[arg(long = "R-star", global = true, alias = "rstar-domain")]
    #[serde(rename = "R_star", alias = "rstar_domain")]
    pub r_domain: Option<f64>,
    /// Concentration parameter.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Comma-separated list of ε for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    /// Target mesh size; when unset the patch commands use the resolution rule.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub cells_in_support: Option<f64>,
    #[arg(long, global = true)]
    pub min_rings: Option<usize>,
    /// Relative energy tolerance of the bathtub iteration.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Re-seed the patch at shifted positions after the bathtub stalls.
    #[arg(long, global = true)]
    pub translate: Option<bool>,
    /// Initial patch position.
    #[arg(long, global = true)]
    pub seed_x: Option<f64>,
    #[arg(long, global = true)]
    pub seed_y: Option<f64>,
    /// Rotates the seed about the origin, in radians, to pick another
    /// member of the rotation orbit.
    #[arg(long, global = true)]
    pub seed_angle: Option<f64>,
    /// Horizon in rotation periods.
    #[arg(long, global = true)]
    pub periods: Option<f64>,
    /// Horizon in time units; overrides `periods`.
    #[arg(long = "T", global = true)]
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    /// `auto` or a fixed time step.
    #[arg(long, global = true)]
    pub dt: Option<String>,
    /// Courant number of the time step.
    #[arg(long, global = true)]
    pub cfl: Option<f64>,
    /// `markers` or `semi-lagrangian`.
    #[arg(long, global = true)]
    pub scheme: Option<String>,
    /// Markers per cell side.
    #[arg(long, global = true)]
    pub markers: Option<usize>,
    /// Exponent of the orbital distance.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Comma-separated perturbation sizes for the stability study.
    #[arg(long, global = true, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
    /// Seed of every random choice.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    #[arg(long, global = true)]
    pub n_theta: Option<usize>,
    #[arg(long, global = true)]
    pub rows_per_period: Option<usize>,
    /// Number of helical levels of the lift.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Helix turns covered by the lift.
    #[arg(long, global = true)]
    pub turns: Option<f64>,
    /// Coefficient of `green`: `helical` or `identity`.
    #[arg(long, global = true)]
    pub field: Option<String>,
    /// Node pairs sampled by `green`.
    #[arg(long, global = true, alias = "sources")]
    #[serde(alias = "sources")]
    pub pairs: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Overrides, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {}", path.display(), e.message())))
    }

    /// `self` with every key set in `top` replaced.
    pub fn overlay(mut self, top: &Overrides) -> Overrides {
        overlay!(
            self, top, k, d, r_star, r_domain, eps, eps_list, h, cells_in_support, min_rings, tol, max_iter, translate,
            seed_x, seed_y, seed_angle, periods, horizon, dt, cfl, scheme, markers, p, delta, rng_seed, n_theta, rows_per_period, levels, turns,
            field, pairs
        );
        self
    }
}

/// Fully resolved configuration, echoed into every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub k: f64,
    pub d: f64,
    pub r_star: f64,
    #[serde(rename = "R_star")]
    pub r_domain: f64,
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub h: Option<f64>,
    pub cells_in_support: f64,
    pub min_rings: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub translate: bool,
    pub seed_x: f64,
    pub seed_y: f64,
    pub seed_angle: f64,
    pub periods: f64,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub dt: String,
    pub cfl: f64,
    pub scheme: String,
    pub markers: usize,
    pub p: f64,
    pub delta: Vec<f64>,
    pub rng_seed: u64,
    pub n_theta: usize,
    pub rows_per_period: usize,
    pub levels: usize,
    pub turns: f64,
    pub field: String,
    pub pairs: usize,
    pub out: PathBuf,
}

impl Settings {
    pub fn resolve(o: &Overrides, out: PathBuf) -> Result<Settings, CliError> {
        let rule = ResolutionRule::default();
        let solve = SolveOptions::default();
        let stab = StabilitySettings::default();
        let s = Settings {
            k: o.k.unwrap_or(1.0),
            d: o.d.unwrap_or(1.0),
            r_star: o.r_star.unwrap_or(0.5),
            r_domain: o.r_domain.unwrap_or(1.0),
            eps: o.eps.unwrap_or(0.1),
            eps_list: o.eps_list.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]),
            h: o.h,
            cells_in_support: o.cells_in_support.unwrap_or(rule.cells_in_support),
            min_rings: o.min_rings.unwrap_or(rule.min_rings),
            tol: o.tol.unwrap_or(solve.tol),
            max_iter: o.max_iter.unwrap_or(solve.max_iter),
            translate: o.translate.unwrap_or(solve.translate),
            seed_x: o.seed_x.unwrap_or(0.8),
            seed_y: o.seed_y.unwrap_or(0.0),
            seed_angle: o.seed_angle.unwrap_or(0.0),
            periods: o.periods.unwrap_or(1.0),
            horizon: o.horizon,
            dt: o.dt.clone().unwrap_or_else(|| "auto".into()),
            cfl: o.cfl.unwrap_or(stab.cfl),
            scheme: o.scheme.clone().unwrap_or_else(|| "markers".into()),
            markers: o.markers.unwrap_or(stab.markers_per_side),
            p: o.p.unwrap_or(stab.p),
            delta: o.delta.clone().unwrap_or_default(),
            rng_seed: o.rng_seed.unwrap_or(stab.seed),
            n_theta: o.n_theta.unwrap_or(stab.n_theta),
            rows_per_period: o.rows_per_period.unwrap_or(stab.rows_per_period),
            levels: o.levels.unwrap_or(64),
            turns: o.turns.unwrap_or(1.0),
            field: o.field.clone().unwrap_or_else(|| "helical".into()),
            pairs: o.pairs.unwrap_or(50),
            out,
        };
        s.scheme()?;
        if !matches!(s.field.as_str(), "helical" | "identity") {
            return Err(CliError::Usage(format!("field must be helical or identity, got {}", s.field)));
        }
        s.fixed_dt()?;
        if s.eps_list.is_empty() {
            return Err(CliError::Usage("eps_list is empty".into()));
        }
        Ok(s)
    }

    pub fn params(&self) -> Result<HelixParams, CliError> {
        Ok(HelixParams::new(self.k, self.d, self.r_star, self.r_domain, self.eps)?)
    }

    /// Seed point after the seed rotation.
    pub fn seed(&self) -> Point {
        rotate([self.seed_x, self.seed_y], self.seed_angle)
    }

    /// `None` for `dt = auto`.
    pub fn fixed_dt(&self) -> Result<Option<f64>, CliError> {
        if self.dt == "auto" {
            return Ok(None);
        }
        match self.dt.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
            _ => Err(CliError::Usage(format!("dt must be auto or a positive number, got {}", self.dt))),
        }
    }

    pub fn rule(&self) -> ResolutionRule {
        ResolutionRule { cells_in_support: self.cells_in_support, min_rings: self.min_rings }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.tol, max_iter: self.max_iter, translate: self.translate }
    }

    pub fn scheme(&self) -> Result<Scheme, CliError> {
        match self.scheme.as_str() {
            "markers" => Ok(Scheme::Markers(self.markers.max(1))),
            "semi-lagrangian" | "sl" => Ok(Scheme::SemiLagrangian),
            other => Err(CliError::Usage(format!("scheme must be markers or semi-lagrangian, got {other}"))),
        }
    }

    pub fn stability(&self) -> StabilitySettings {
        StabilitySettings {
            p: self.p,
            periods: self.periods,
            seed: self.rng_seed,
            markers_per_side: self.markers.max(1),
            cfl: self.cfl,
            n_theta: self.n_theta,
            rows_per_period: self.rows_per_period,
        }
    }
}
