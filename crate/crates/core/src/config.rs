//! Line-based run configuration: `section.key = value`, `#` comments,
//! comma-separated vectors, booleans as `true`/`false`. Unknown keys are
//! rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mpt::Direction;

#[derive(Clone, Debug)]
pub struct GridConfig {
    pub n: usize,
    pub box_bounds: Vec<(f64, f64)>,
    pub h: f64,
    pub collar: f64,
    pub r_ext: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelName {
    Example,
    Power,
    Quadratic,
    Table,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatumKind {
    Zero,
    Const,
    Bump,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub name: ModelName,
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub lin: f64,
    pub table_file: Option<String>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub l2: f64,
    pub u_const: Vec<f64>,
    pub v_kind: DatumKind,
    pub v_amp: f64,
    pub v_center: Vec<f64>,
    pub v_width: f64,
    pub v_l1: f64,
    pub project_v: bool,
    pub z_max: f64,
    pub samples_z: usize,
    pub samples_u: usize,
}

#[derive(Clone, Debug)]
pub struct MptConfig {
    pub eta: f64,
    pub path_nodes: usize,
    pub tol_grad: f64,
    pub tol_val: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub direction: Direction,
    pub geometry_samples: usize,
}

#[derive(Clone, Debug)]
pub struct StabilityConfig {
    pub count: usize,
    pub du: Vec<f64>,
    pub dv_kind: DatumKind,
    pub dv_amp: f64,
    pub dv_center: Vec<f64>,
    pub dv_width: f64,
    pub warm: bool,
    pub rate_exp: f64,
    pub multistart: usize,
    pub gap_samples: usize,
    pub gap_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlClass {
    Piecewise,
    Lipschitz,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CostName {
    Unit,
    Tracking,
}

#[derive(Clone, Debug)]
pub struct ControlConfig {
    pub class: ControlClass,
    pub r: usize,
    pub split_axis: usize,
    /// Shared candidate values; `values_i` keys override per part.
    pub values: Vec<f64>,
    pub values_per_part: BTreeMap<usize, Vec<f64>>,
    pub lambda: f64,
    pub anchors_per_axis: usize,
    pub max_evals: usize,
    pub cost: CostName,
    pub target: f64,
    pub reg: f64,
    pub exhaustive_cap: usize,
}

#[derive(Clone, Debug)]
pub struct OutputConfig {
    pub dir: String,
    pub dump_weights: bool,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub alpha: f64,
    pub model: ModelConfig,
    pub mpt: MptConfig,
    pub stability: StabilityConfig,
    pub control: ControlConfig,
    pub output: OutputConfig,
    pub spectrum_count: usize,
    pub workers: usize,
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got '{other}'"))),
    }
}

fn parse_vec(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| parse_f64(key, s))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<RunConfig> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }
        RunConfig::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<RunConfig> {
        let mut take = |k: &str| map.remove(k);

        let n = match take("grid.n") {
            Some(v) => parse_usize("grid.n", &v)?,
            None => return Err(Error::Config("missing grid.n".into())),
        };
        let box_raw = take("grid.box").ok_or_else(|| Error::Config("missing grid.box".into()))?;
        let flat = parse_vec("grid.box", &box_raw)?;
        if flat.len() != 2 * n {
            return Err(Error::Config(format!(
                "grid.box needs {} numbers for n = {n}",
                2 * n
            )));
        }
        let box_bounds: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
        let h = parse_f64("grid.h", &take("grid.h").ok_or_else(|| Error::Config("missing grid.h".into()))?)?;
        let collar = match take("grid.collar") {
            Some(v) => parse_f64("grid.collar", &v)?,
            None => 2.0 * h,
        };
        let r_ext = match take("grid.r_ext") {
            Some(v) => parse_f64("grid.r_ext", &v)?,
            None => collar + h,
        };
        if h <= 0.0 {
            return Err(Error::Config("grid.h must be positive".into()));
        }
        let grid = GridConfig {
            n,
            box_bounds,
            h,
            collar,
            r_ext,
        };

        let alpha = parse_f64(
            "operator.alpha",
            &take("operator.alpha").ok_or_else(|| Error::Config("missing operator.alpha".into()))?,
        )?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::Config(format!(
                "operator.alpha must lie in (0, 2), got {alpha}"
            )));
        }
        if n as f64 <= alpha {
            return Err(Error::Config(format!(
                "need grid.n > operator.alpha, got n = {n}, alpha = {alpha}"
            )));
        }

        let name = match take("model.name").as_deref() {
            Some("example") => ModelName::Example,
            Some("power") => ModelName::Power,
            Some("quadratic") => ModelName::Quadratic,
            Some("table") => ModelName::Table,
            Some(other) => {
                return Err(Error::Config(format!("unknown model.name '{other}'")));
            }
            None => ModelName::Example,
        };
        let p = match take("model.p") {
            Some(v) => parse_f64("model.p", &v)?,
            None => 4.0,
        };
        if name == ModelName::Power && p <= 2.0 {
            return Err(Error::Config(format!("model.p must exceed 2, got {p}")));
        }
        let u_lo = match take("model.u_lo") {
            Some(v) => parse_vec("model.u_lo", &v)?,
            None => vec![0.0],
        };
        let u_hi = match take("model.u_hi") {
            Some(v) => parse_vec("model.u_hi", &v)?,
            None => vec![1.0],
        };
        if u_lo.len() != u_hi.len() {
            return Err(Error::Config("model.u_lo and model.u_hi disagree on dimension".into()));
        }
        let u_const = match take("model.u_const") {
            Some(v) => parse_vec("model.u_const", &v)?,
            None => u_lo
                .iter()
                .zip(&u_hi)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        };
        let v_kind = match take("model.v_kind").as_deref() {
            Some("zero") | None => DatumKind::Zero,
            Some("const") => DatumKind::Const,
            Some("bump") => DatumKind::Bump,
            Some(other) => return Err(Error::Config(format!("unknown model.v_kind '{other}'"))),
        };
        let model = ModelConfig {
            name,
            gamma: match take("model.gamma") {
                Some(v) => parse_f64("model.gamma", &v)?,
                None => 1.0,
            },
            p,
            q: match take("model.q") {
                Some(v) => parse_f64("model.q", &v)?,
                None => -0.5,
            },
            lin: match take("model.lin") {
                Some(v) => parse_f64("model.lin", &v)?,
                None => 0.0,
            },
            table_file: take("model.table_file"),
            l2: match take("model.l2") {
                Some(v) => parse_f64("model.l2", &v)?,
                None => u_lo
                    .iter()
                    .zip(&u_hi)
                    .map(|(a, b)| a.abs().max(b.abs()))
                    .fold(0.0f64, f64::max),
            },
            u_lo,
            u_hi,
            u_const,
            v_kind,
            v_amp: match take("model.v_amp") {
                Some(v) => parse_f64("model.v_amp", &v)?,
                None => 0.0,
            },
            v_center: match take("model.v_center") {
                Some(v) => parse_vec("model.v_center", &v)?,
                None => vec![0.5; n],
            },
            v_width: match take("model.v_width") {
                Some(v) => parse_f64("model.v_width", &v)?,
                None => 0.25,
            },
            v_l1: match take("model.v_l1") {
                Some(v) => parse_f64("model.v_l1", &v)?,
                None => 1.0,
            },
            project_v: match take("model.project_v") {
                Some(v) => parse_bool("model.project_v", &v)?,
                None => true,
            },
            z_max: match take("model.z_max") {
                Some(v) => parse_f64("model.z_max", &v)?,
                None => 10.0,
            },
            samples_z: match take("model.samples_z") {
                Some(v) => parse_usize("model.samples_z", &v)?,
                None => 41,
            },
            samples_u: match take("model.samples_u") {
                Some(v) => parse_usize("model.samples_u", &v)?,
                None => 5,
            },
        };

        let direction = match take("mpt.direction").as_deref() {
            Some("eigen_tilt") | None => Direction::EigenTilt,
            Some("ramp") => Direction::Ramp,
            Some("random") => Direction::Random,
            Some(other) => return Err(Error::Config(format!("unknown mpt.direction '{other}'"))),
        };
        let mpt = MptConfig {
            eta: match take("mpt.eta") {
                Some(v) => parse_f64("mpt.eta", &v)?,
                None => 0.05,
            },
            path_nodes: match take("mpt.path_nodes") {
                Some(v) => parse_usize("mpt.path_nodes", &v)?,
                None => 33,
            },
            tol_grad: match take("mpt.tol_grad") {
                Some(v) => parse_f64("mpt.tol_grad", &v)?,
                None => 1e-8,
            },
            tol_val: match take("mpt.tol_val") {
                Some(v) => parse_f64("mpt.tol_val", &v)?,
                None => 1e-8,
            },
            max_iter: match take("mpt.max_iter") {
                Some(v) => parse_usize("mpt.max_iter", &v)?,
                None => 50_000,
            },
            seed: match take("mpt.seed") {
                Some(v) => parse_u64("mpt.seed", &v)?,
                None => 0,
            },
            direction,
            geometry_samples: match take("mpt.geometry_samples") {
                Some(v) => parse_usize("mpt.geometry_samples", &v)?,
                None => 200,
            },
        };

        let dv_kind = match take("stability.dv_kind").as_deref() {
            Some("zero") | None => DatumKind::Zero,
            Some("const") => DatumKind::Const,
            Some("bump") => DatumKind::Bump,
            Some(other) => {
                return Err(Error::Config(format!("unknown stability.dv_kind '{other}'")));
            }
        };
        let stability = StabilityConfig {
            count: match take("stability.k") {
                Some(v) => parse_usize("stability.k", &v)?,
                None => 16,
            },
            du: match take("stability.du") {
                Some(v) => parse_vec("stability.du", &v)?,
                None => vec![0.0],
            },
            dv_kind,
            dv_amp: match take("stability.dv_amp") {
                Some(v) => parse_f64("stability.dv_amp", &v)?,
                None => 0.0,
            },
            dv_center: match take("stability.dv_center") {
                Some(v) => parse_vec("stability.dv_center", &v)?,
                None => vec![0.5; n],
            },
            dv_width: match take("stability.dv_width") {
                Some(v) => parse_f64("stability.dv_width", &v)?,
                None => 0.25,
            },
            warm: match take("stability.warm") {
                Some(v) => parse_bool("stability.warm", &v)?,
                None => true,
            },
            rate_exp: match take("stability.rate_exp") {
                Some(v) => parse_f64("stability.rate_exp", &v)?,
                None => 1.0,
            },
            multistart: match take("stability.multistart") {
                Some(v) => parse_usize("stability.multistart", &v)?,
                None => 4,
            },
            gap_samples: match take("stability.gap_samples") {
                Some(v) => parse_usize("stability.gap_samples", &v)?,
                None => 50,
            },
            gap_radius: match take("stability.gap_radius") {
                Some(v) => parse_f64("stability.gap_radius", &v)?,
                None => 2.0,
            },
        };

        let class = match take("control.class").as_deref() {
            Some("piecewise") | None => ControlClass::Piecewise,
            Some("lipschitz") => ControlClass::Lipschitz,
            Some(other) => return Err(Error::Config(format!("unknown control.class '{other}'"))),
        };
        let cost = match take("control.cost").as_deref() {
            Some("unit") => CostName::Unit,
            Some("tracking") | None => CostName::Tracking,
            Some(other) => return Err(Error::Config(format!("unknown control.cost '{other}'"))),
        };
        let r = match take("control.r") {
            Some(v) => parse_usize("control.r", &v)?,
            None => 2,
        };
        let mut values_per_part = BTreeMap::new();
        for part in 1..=r {
            if let Some(v) = take(&format!("control.values_{part}")) {
                values_per_part.insert(part - 1, parse_vec("control.values_i", &v)?);
            }
        }
        let control = ControlConfig {
            class,
            r,
            split_axis: match take("control.split_axis") {
                Some(v) => parse_usize("control.split_axis", &v)?,
                None => 0,
            },
            values: match take("control.values") {
                Some(v) => parse_vec("control.values", &v)?,
                None => Vec::new(),
            },
            values_per_part,
            lambda: match take("control.lambda") {
                Some(v) => parse_f64("control.lambda", &v)?,
                None => 1.0,
            },
            anchors_per_axis: match take("control.anchors_per_axis") {
                Some(v) => parse_usize("control.anchors_per_axis", &v)?,
                None => 2,
            },
            max_evals: match take("control.max_evals") {
                Some(v) => parse_usize("control.max_evals", &v)?,
                None => 100,
            },
            cost,
            target: match take("control.target") {
                Some(v) => parse_f64("control.target", &v)?,
                None => 0.5,
            },
            reg: match take("control.reg") {
                Some(v) => parse_f64("control.reg", &v)?,
                None => 0.1,
            },
            exhaustive_cap: match take("control.exhaustive_cap") {
                Some(v) => parse_usize("control.exhaustive_cap", &v)?,
                None => 3125,
            },
        };

        let output = OutputConfig {
            dir: take("output.dir").unwrap_or_else(|| "out".to_string()),
            dump_weights: match take("output.dump_weights") {
                Some(v) => parse_bool("output.dump_weights", &v)?,
                None => false,
            },
        };
        let spectrum_count = match take("spectrum.count") {
            Some(v) => parse_usize("spectrum.count", &v)?,
            None => 10,
        };
        let workers = match take("workers") {
            Some(v) => parse_usize("workers", &v)?,
            None => 0,
        };

        if let Some((key, _)) = map.iter().next() {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }

        Ok(RunConfig {
            grid,
            alpha,
            model,
            mpt,
            stability,
            control,
            output,
            spectrum_count,
            workers,
        })
    }

    /// Canonical echo written into the run manifest.
    pub fn echo(&self) -> String {
        format!("{self:#?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
grid.n = 2
grid.box = 0,1,0,1
grid.h = 0.25
operator.alpha = 1.5
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_str_content(MINIMAL).unwrap();
        assert_eq!(cfg.grid.n, 2);
        assert_eq!(cfg.grid.collar, 0.5);
        assert_eq!(cfg.grid.r_ext, 0.75);
        assert_eq!(cfg.mpt.path_nodes, 33);
        assert_eq!(cfg.model.name, ModelName::Example);
        assert!(cfg.model.project_v);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nmodel.gamm = 1.0\n");
        let err = RunConfig::from_str_content(&bad).unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn range_validation() {
        let bad = MINIMAL.replace("operator.alpha = 1.5", "operator.alpha = 2.5");
        assert!(RunConfig::from_str_content(&bad).is_err());
        let bad = MINIMAL.replace("grid.n = 2", "grid.n = 1");
        assert!(RunConfig::from_str_content(&bad).is_err()); // n <= alpha
        let bad = format!("{MINIMAL}\nmodel.name = power\nmodel.p = 1.5\n");
        assert!(RunConfig::from_str_content(&bad).is_err());
        let bad = MINIMAL.replace("grid.h = 0.25", "grid.h = -0.25");
        assert!(RunConfig::from_str_content(&bad).is_err());
    }

    #[test]
    fn comments_vectors_and_duplicates() {
        let text = format!("{MINIMAL}\nstability.du = 0.1,0.2 # two components\n");
        let cfg = RunConfig::from_str_content(&text).unwrap();
        assert_eq!(cfg.stability.du, vec![0.1, 0.2]);
        let dup = format!("{MINIMAL}\ngrid.h = 0.5\n");
        assert!(RunConfig::from_str_content(&dup).is_err());
    }
}
