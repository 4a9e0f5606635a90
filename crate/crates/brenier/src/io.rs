//! On-disk formats: network models and density specs as JSON, samples,
//! grids and training history as CSV.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use brenier_core::diff::ParamRole;
use brenier_core::metrics::{GridField, GridSpec, GridVectorField};
use brenier_core::train::HistoryEntry;
use brenier_core::{DensitySpec, Gaussian, Icnn, IcnnArch, MapDirection, Mixture, NetPushforward, SampleBatch};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_SCHEMA: &str = "brenier.icnn";
pub const MODEL_VERSION: u32 = 1;

/// Serialized [`Icnn`]. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub schema: String,
    pub version: u32,
    pub dim: usize,
    pub widths: Vec<usize>,
    pub alpha: f64,
    pub convexity_floor: f64,
    pub layers: Vec<LayerDoc>,
    pub readout: ReadoutDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    /// Absent on the first layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wz: Option<Vec<Vec<f64>>>,
    pub wx: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutDoc {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub c0: f64,
}

fn rows(values: &[f64], cols: usize) -> Vec<Vec<f64>> {
    values.chunks(cols).map(<[f64]>::to_vec).collect()
}

impl ModelDoc {
    pub fn from_icnn(net: &Icnn) -> Self {
        let arch = net.arch();
        let d = arch.dim();
        let block = |l, role| net.block(l, role).expect("layout has every block");
        let layers = arch
            .widths()
            .iter()
            .enumerate()
            .map(|(l, _)| LayerDoc {
                wz: (l > 0).then(|| rows(block(l, ParamRole::HiddenWeights), arch.widths()[l - 1])),
                wx: rows(block(l, ParamRole::InputWeights), d),
                b: block(l, ParamRole::Bias).to_vec(),
            })
            .collect();
        let last = arch.depth();
        Self {
            schema: MODEL_SCHEMA.into(),
            version: MODEL_VERSION,
            dim: d,
            widths: arch.widths().to_vec(),
            alpha: arch.alpha(),
            convexity_floor: arch.convexity_floor(),
            layers,
            readout: ReadoutDoc {
                a: block(last, ParamRole::ReadoutHidden).to_vec(),
                c: block(last, ParamRole::ReadoutInput).to_vec(),
                c0: block(last, ParamRole::ReadoutBias)[0],
            },
        }
    }

    pub fn to_icnn(&self) -> Result<Icnn> {
        if self.schema != MODEL_SCHEMA || self.version != MODEL_VERSION {
            return Err(Error::Input(format!(
                "unsupported model schema {} version {} (expected {MODEL_SCHEMA} version {MODEL_VERSION})",
                self.schema, self.version
            )));
        }
        if self.layers.len() != self.widths.len() {
            return Err(Error::Input(format!(
                "model lists {} layers for {} widths",
                self.layers.len(),
                self.widths.len()
            )));
        }
        let arch = IcnnArch::new(self.dim, &self.widths, self.alpha, self.convexity_floor)?;
        let mut net = Icnn::zeros(arch);
        let mut fill = |l: usize, role: ParamRole, src: Vec<f64>, what: &str| -> Result<()> {
            let dst = net.block_mut(l, role).expect("layout has every block");
            if dst.len() != src.len() {
                return Err(Error::Input(format!(
                    "layer {l} {what}: expected {} values, got {}",
                    dst.len(),
                    src.len()
                )));
            }
            dst.copy_from_slice(&src);
            Ok(())
        };
        let flat = |m: &[Vec<f64>], cols: usize, what: &str| -> Result<Vec<f64>> {
            if m.iter().any(|r| r.len() != cols) {
                return Err(Error::Input(format!("{what}: every row needs {cols} entries")));
            }
            Ok(m.concat())
        };
        for (l, layer) in self.layers.iter().enumerate() {
            match (&layer.wz, l) {
                (None, 0) => {}
                (Some(wz), l) if l > 0 => {
                    fill(l, ParamRole::HiddenWeights, flat(wz, self.widths[l - 1], "wz")?, "wz")?
                }
                _ => return Err(Error::Input(format!("layer {l}: wz must be present exactly on layers after the first"))),
            }
            fill(l, ParamRole::InputWeights, flat(&layer.wx, self.dim, "wx")?, "wx")?;
            fill(l, ParamRole::Bias, layer.b.clone(), "b")?;
        }
        let last = self.widths.len();
        fill(last, ParamRole::ReadoutHidden, self.readout.a.clone(), "a")?;
        fill(last, ParamRole::ReadoutInput, self.readout.c.clone(), "c")?;
        fill(last, ParamRole::ReadoutBias, vec![self.readout.c0], "c0")?;
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("model contains non-finite weights".into()));
        }
        if !net.constraints_hold() {
            return Err(Error::Input("model has negative hidden or read-out weights".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDoc {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianDoc {
    pub fn from_gaussian(g: &Gaussian) -> Self {
        Self {
            mean: g.mean().to_vec(),
            cov: rows(g.cov(), g.dim()),
        }
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::Input(format!("Gaussian covariance must be {d} x {d}")));
        }
        Ok(Gaussian::new(self.mean.clone(), self.cov.concat())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionDoc {
    Pullback,
    Pushforward,
}

/// Serialized [`DensitySpec`], tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityDoc {
    StandardGaussian {
        dim: usize,
    },
    Gaussian(GaussianDoc),
    Mixture {
        weights: Vec<f64>,
        components: Vec<GaussianDoc>,
    },
    Annulus {
        dim: usize,
    },
    NetPushforward {
        direction: DirectionDoc,
        potential: Box<ModelDoc>,
        background: Box<DensityDoc>,
    },
}

impl DensityDoc {
    pub fn from_spec(spec: &DensitySpec) -> Self {
        match spec {
            DensitySpec::StandardGaussian(d) => DensityDoc::StandardGaussian { dim: *d },
            DensitySpec::Gaussian(g) => DensityDoc::Gaussian(GaussianDoc::from_gaussian(g)),
            DensitySpec::Mixture(m) => DensityDoc::Mixture {
                weights: m.weights().to_vec(),
                components: m.components().iter().map(GaussianDoc::from_gaussian).collect(),
            },
            DensitySpec::Annulus(d) => DensityDoc::Annulus { dim: *d },
            DensitySpec::NetPushforward(n) => DensityDoc::NetPushforward {
                direction: match n.direction {
                    MapDirection::Pullback => DirectionDoc::Pullback,
                    MapDirection::Pushforward => DirectionDoc::Pushforward,
                },
                potential: Box::new(ModelDoc::from_icnn(&n.potential)),
                background: Box::new(DensityDoc::from_spec(&n.background)),
            },
        }
    }

    pub fn to_spec(&self) -> Result<DensitySpec> {
        Ok(match self {
            DensityDoc::StandardGaussian { dim } | DensityDoc::Annulus { dim } if *dim == 0 => {
                return Err(brenier_core::Error::ZeroDimension.into())
            }
            DensityDoc::StandardGaussian { dim } => DensitySpec::StandardGaussian(*dim),
            DensityDoc::Gaussian(g) => DensitySpec::Gaussian(g.to_gaussian()?),
            DensityDoc::Mixture { weights, components } => {
                let comps = components.iter().map(GaussianDoc::to_gaussian).collect::<Result<Vec<_>>>()?;
                DensitySpec::Mixture(Mixture::new(weights.clone(), comps)?)
            }
            DensityDoc::Annulus { dim } => DensitySpec::Annulus(*dim),
            DensityDoc::NetPushforward {
                direction,
                potential,
                background,
            } => {
                let direction = match direction {
                    DirectionDoc::Pullback => MapDirection::Pullback,
                    DirectionDoc::Pushforward => MapDirection::Pushforward,
                };
                DensitySpec::NetPushforward(NetPushforward::new(
                    direction,
                    potential.to_icnn()?,
                    background.to_spec()?,
                )?)
            }
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

pub fn save_model(path: &Path, net: &Icnn) -> Result<()> {
    if net.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("refusing to save a model with non-finite weights".into()));
    }
    write_json(path, &ModelDoc::from_icnn(net))
}

pub fn load_model(path: &Path) -> Result<Icnn> {
    read_json::<ModelDoc>(path)?.to_icnn()
}

pub fn save_density(path: &Path, spec: &DensitySpec) -> Result<()> {
    write_json(path, &DensityDoc::from_spec(spec))
}

/// Loads a density spec from JSON, or from TOML when the extension is `.toml`.
pub fn load_density(path: &Path) -> Result<DensitySpec> {
    let doc: DensityDoc = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))?
    } else {
        read_json(path)?
    };
    doc.to_spec()
}

fn sample_header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// CSV with header `x0,...,x{d-1}` and one sample per row.
pub fn write_samples<W: Write>(out: W, batch: &SampleBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(sample_header(batch.dim())).map_err(csv_err)?;
    for row in batch.rows() {
        w.write_record(row.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<samples>", e))
}

pub fn save_samples(path: &Path, batch: &SampleBatch) -> Result<()> {
    let mut buf = Vec::new();
    write_samples(&mut buf, batch)?;
    write_atomic(path, &buf)
}

pub fn read_samples<R: Read>(input: R, origin: &Path) -> Result<SampleBatch> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers().map_err(|e| Error::parse(origin, e))?.clone();
    let d = header.len();
    if d == 0 || !header.iter().eq(sample_header(d).iter().map(String::as_str)) {
        return Err(Error::parse(origin, "expected a header x0,x1,...,x{d-1}"));
    }
    let mut data = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::parse(origin, format!("row {}: {e}", i + 1)))?;
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(origin, format!("row {}: `{field}` is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(origin, format!("row {}: non-finite value", i + 1)));
            }
            data.push(v);
        }
    }
    Ok(SampleBatch::new(d, data)?)
}

pub fn load_samples(path: &Path) -> Result<SampleBatch> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(BufReader::new(file), path)
}

/// Grid metadata written on the `#` line above the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GridMeta {
    lo: [f64; 2],
    hi: [f64; 2],
    res: [usize; 2],
}

/// Density and/or map values on a 2-d grid, x index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridExport {
    pub grid: GridSpec,
    pub density: Option<Vec<f64>>,
    /// Interleaved `(map_x, map_y)` pairs.
    pub map: Option<Vec<f64>>,
}

impl GridExport {
    pub fn new(density: Option<&GridField>, map: Option<&GridVectorField>) -> Result<Self> {
        let grid = match (density, map) {
            (Some(f), Some(m)) if f.grid != m.grid => {
                return Err(Error::Input("density and map grids differ".into()))
            }
            (Some(f), _) => f.grid,
            (None, Some(m)) => m.grid,
            (None, None) => return Err(Error::Input("nothing to export".into())),
        };
        Ok(Self {
            grid,
            density: density.map(|f| f.values.clone()),
            map: map.map(|m| m.values.clone()),
        })
    }

    pub fn density_field(&self) -> Option<GridField> {
        self.density.clone().map(|values| GridField { grid: self.grid, values })
    }

    pub fn map_field(&self) -> Option<GridVectorField> {
        self.map.clone().map(|values| GridVectorField { grid: self.grid, values })
    }
}

pub fn write_grid<W: Write>(mut out: W, export: &GridExport) -> Result<()> {
    let g = export.grid;
    let meta = GridMeta {
        lo: g.lo,
        hi: g.hi,
        res: g.res,
    };
    let io_err = |e| Error::io("<grid>", e);
    writeln!(out, "# {}", serde_json::to_string(&meta).expect("plain struct")).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    let mut header = vec!["x", "y"];
    if export.density.is_some() {
        header.push("density");
    }
    if export.map.is_some() {
        header.extend(["map_x", "map_y"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    let nodes = g.nodes();
    for (k, p) in nodes.rows().enumerate() {
        let mut rec = vec![p[0].to_string(), p[1].to_string()];
        if let Some(v) = &export.density {
            rec.push(v[k].to_string());
        }
        if let Some(m) = &export.map {
            rec.push(m[2 * k].to_string());
            rec.push(m[2 * k + 1].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn save_grid(path: &Path, export: &GridExport) -> Result<()> {
    let mut buf = Vec::new();
    write_grid(&mut buf, export)?;
    write_atomic(path, &buf)
}

pub fn read_grid<R: Read>(input: R, origin: &Path) -> Result<GridExport> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(origin, e))?;
    let meta: GridMeta = first
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(origin, "missing `#` metadata line"))
        .and_then(|m| serde_json::from_str(m.trim()).map_err(|e| Error::parse(origin, e)))?;
    let grid = GridSpec {
        lo: meta.lo,
        hi: meta.hi,
        res: meta.res,
    };
    grid.validate()?;
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(origin, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let has_density = header.iter().any(|h| h == "density");
    let has_map = header.iter().any(|h| h == "map_x");
    let mut density = Vec::new();
    let mut map = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::parse(origin, e))?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(origin, format!("bad value in column {i}")))
        };
        let mut col = 2;
        if has_density {
            density.push(num(col)?);
            col += 1;
        }
        if has_map {
            map.push(num(col)?);
            map.push(num(col + 1)?);
        }
    }
    let n = grid.len();
    if (has_density && density.len() != n) || (has_map && map.len() != 2 * n) {
        return Err(Error::parse(origin, format!("expected {n} grid rows")));
    }
    Ok(GridExport {
        grid,
        density: has_density.then_some(density),
        map: has_map.then_some(map),
    })
}

pub fn load_grid(path: &Path) -> Result<GridExport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(file, path)
}

/// CSV rows `phase,iteration,loss,wall_time`.
pub fn write_history<W: Write>(out: W, history: &[HistoryEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["phase", "iteration", "loss", "wall_time"]).map_err(csv_err)?;
    for h in history {
        w.write_record([
            h.phase.name().to_string(),
            h.iteration.to_string(),
            h.loss.to_string(),
            h.wall_time.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<history>", e))
}

pub fn save_history(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    let mut buf = Vec::new();
    write_history(&mut buf, history)?;
    write_atomic(path, &buf)
}
