use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, GridSpec, ParamRange, TimeGrid};

/// Where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    /// Generator settings, free-form.
    #[serde(default)]
    pub settings: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        values.fold(
            Self {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |m, v| Self {
                min: m.min.min(v),
                max: m.max.max(v),
            },
        )
    }

    fn span(&self, what: &str) -> Result<f64, DataError> {
        let s = self.max - self.min;
        if !(s > 0.0) {
            return Err(DataError::DegenerateRange(what.to_string()));
        }
        Ok(s)
    }
}

/// Min-max statistics of a training split. `field` is `None` when fields
/// stay in physical units; every parameter component has its own pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub field: Option<MinMax>,
    pub params: Vec<MinMax>,
}

impl NormStats {
    pub fn compute(train: &TrajectoryDataset, normalize_fields: bool) -> Result<Self, DataError> {
        let field = normalize_fields.then(|| MinMax::of(train.fields.iter().copied()));
        if let Some(f) = &field {
            f.span("field")?;
        }
        let z = train.param_dim();
        let params: Vec<MinMax> = (0..z)
            .map(|c| MinMax::of((0..train.len()).map(|r| train.params_of(r)[c])))
            .collect();
        for (c, p) in params.iter().enumerate() {
            p.span(&format!("parameter {}", c))?;
        }
        Ok(Self { field, params })
    }

    /// Statistics that leave everything unchanged (no field scaling, no
    /// parameters).
    pub fn identity() -> Self {
        Self {
            field: None,
            params: vec![],
        }
    }

    pub fn normalize_fields(&self, values: &mut [f64]) -> Result<(), DataError> {
        if let Some(f) = &self.field {
            let s = f.span("field")?;
            values.iter_mut().for_each(|v| *v = (*v - f.min) / s);
        }
        Ok(())
    }

    pub fn denormalize_fields(&self, values: &mut [f64]) -> Result<(), DataError> {
        if let Some(f) = &self.field {
            let s = f.span("field")?;
            values.iter_mut().for_each(|v| *v = *v * s + f.min);
        }
        Ok(())
    }

    /// Normalizes a `[rows, z]` parameter block in place.
    pub fn normalize_params(&self, values: &mut [f64]) -> Result<(), DataError> {
        self.map_params(values, |v, m, s| (v - m) / s)
    }

    pub fn denormalize_params(&self, values: &mut [f64]) -> Result<(), DataError> {
        self.map_params(values, |v, m, s| v * s + m)
    }

    fn map_params(
        &self,
        values: &mut [f64],
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<(), DataError> {
        let z = self.params.len();
        if z == 0 {
            return Ok(());
        }
        if values.len() % z != 0 {
            return Err(DataError::Shape(format!(
                "{} parameter values for z = {}",
                values.len(),
                z
            )));
        }
        let spans: Vec<f64> = self
            .params
            .iter()
            .enumerate()
            .map(|(c, p)| p.span(&format!("parameter {}", c)))
            .collect::<Result<_, _>>()?;
        for row in values.chunks_mut(z) {
            for ((v, p), s) in row.iter_mut().zip(&self.params).zip(&spans) {
                *v = f(*v, p.min, *s);
            }
        }
        Ok(())
    }
}

/// Trajectories `[n_traj, F + 1, m, spatial...]` with one parameter vector
/// each.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub grid: GridSpec,
    pub times: TimeGrid,
    pub channels: usize,
    pub param_ranges: Vec<ParamRange>,
    fields: Vec<f64>,
    params: Vec<f64>,
    /// Statistics of the training split this dataset belongs to.
    pub norm: Option<NormStats>,
    /// Whether `fields`/`params` are currently in normalized units.
    pub normalized: bool,
    pub provenance: Provenance,
}

impl TrajectoryDataset {
    /// Builds a dataset in physical units. Field values are rounded to the
    /// 32-bit precision of the file container, so a save/load roundtrip is
    /// exact.
    pub fn new(
        grid: GridSpec,
        times: TimeGrid,
        channels: usize,
        param_ranges: Vec<ParamRange>,
        fields: Vec<f64>,
        params: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let ds = Self {
            grid,
            times,
            channels,
            param_ranges,
            fields: fields.into_iter().map(|v| v as f32 as f64).collect(),
            params,
            norm: None,
            normalized: false,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Assembles trajectories given as per-frame vectors with their
    /// parameter vectors.
    pub fn from_trajectories(
        grid: GridSpec,
        times: TimeGrid,
        channels: usize,
        param_ranges: Vec<ParamRange>,
        trajectories: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let mut fields = Vec::new();
        let mut params = Vec::new();
        for (frames, mu) in trajectories {
            if frames.len() != times.frames() {
                return Err(DataError::Shape(format!(
                    "trajectory has {} frames, time grid has {}",
                    frames.len(),
                    times.frames()
                )));
            }
            for f in frames {
                fields.extend(f);
            }
            params.extend(mu);
        }
        Self::new(
            grid,
            times,
            channels,
            param_ranges,
            fields,
            params,
            provenance,
        )
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.grid.validate()?;
        if self.channels == 0 {
            return Err(DataError::Shape("channel count must be positive".into()));
        }
        let tl = self.traj_len();
        if self.fields.len() % tl != 0 {
            return Err(DataError::Shape(format!(
                "{} field values is not a whole number of trajectories of {}",
                self.fields.len(),
                tl
            )));
        }
        let n = self.fields.len() / tl;
        if self.params.len() != n * self.param_dim() {
            return Err(DataError::Shape(format!(
                "{} parameter values for {} trajectories with z = {}",
                self.params.len(),
                n,
                self.param_dim()
            )));
        }
        if self
            .fields
            .iter()
            .chain(&self.params)
            .any(|v| !v.is_finite())
        {
            return Err(DataError::NonFinite("dataset values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len() / self.traj_len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        self.param_ranges.len()
    }

    pub fn frames(&self) -> usize {
        self.times.frames()
    }

    /// Values per frame, `m * |grid|`.
    pub fn frame_len(&self) -> usize {
        self.channels * self.grid.len()
    }

    pub fn traj_len(&self) -> usize {
        self.frame_len() * self.frames()
    }

    /// `[m, N(, N)]`
    pub fn frame_shape(&self) -> Vec<usize> {
        let mut s = vec![self.channels];
        s.extend(&self.grid.points);
        s
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn trajectory(&self, r: usize) -> &[f64] {
        let tl = self.traj_len();
        &self.fields[r * tl..(r + 1) * tl]
    }

    pub fn frame(&self, r: usize, i: usize) -> &[f64] {
        let fl = self.frame_len();
        &self.trajectory(r)[i * fl..(i + 1) * fl]
    }

    pub fn params_of(&self, r: usize) -> &[f64] {
        let z = self.param_dim();
        &self.params[r * z..(r + 1) * z]
    }

    /// Trajectories at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DataError::Split(format!(
                "index {} out of {}",
                bad,
                self.len()
            )));
        }
        let mut out = Self {
            fields: Vec::with_capacity(indices.len() * self.traj_len()),
            params: Vec::with_capacity(indices.len() * self.param_dim()),
            ..self.clone_meta()
        };
        for &i in indices {
            out.fields.extend_from_slice(self.trajectory(i));
            out.params.extend_from_slice(self.params_of(i));
        }
        Ok(out)
    }

    fn clone_meta(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            channels: self.channels,
            param_ranges: self.param_ranges.clone(),
            fields: vec![],
            params: vec![],
            norm: self.norm.clone(),
            normalized: self.normalized,
            provenance: self.provenance.clone(),
        }
    }

    /// Groups of trajectory indices sharing one parameter vector, in order
    /// of first appearance.
    pub fn param_groups(&self) -> Vec<(Vec<f64>, Vec<usize>)> {
        let mut order: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        let mut lookup: HashMap<Vec<u64>, usize> = HashMap::new();
        for r in 0..self.len() {
            let mu = self.params_of(r);
            let key: Vec<u64> = mu.iter().map(|v| v.to_bits()).collect();
            let slot = *lookup.entry(key).or_insert_with(|| {
                order.push((mu.to_vec(), vec![]));
                order.len() - 1
            });
            order[slot].1.push(r);
        }
        order
    }
}

/// Maps fields (when the stats carry a field range) and every parameter
/// component to `[0, 1]` over the training range.
pub fn normalize(
    ds: &TrajectoryDataset,
    stats: &NormStats,
) -> Result<TrajectoryDataset, DataError> {
    if ds.normalized {
        return Err(DataError::Normalization(
            "dataset is already normalized".into(),
        ));
    }
    if stats.params.len() != ds.param_dim() {
        return Err(DataError::Normalization(format!(
            "stats cover {} parameters, dataset has {}",
            stats.params.len(),
            ds.param_dim()
        )));
    }
    let mut out = ds.clone();
    stats.normalize_fields(&mut out.fields)?;
    stats.normalize_params(&mut out.params)?;
    out.norm = Some(stats.clone());
    out.normalized = true;
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(
    ds: &TrajectoryDataset,
    stats: &NormStats,
) -> Result<TrajectoryDataset, DataError> {
    if !ds.normalized {
        return Err(DataError::Normalization("dataset is not normalized".into()));
    }
    let mut out = ds.clone();
    stats.denormalize_fields(&mut out.fields)?;
    stats.denormalize_params(&mut out.params)?;
    out.normalized = false;
    Ok(out)
}

/// Index ranges for train/validation/test, applied within each parameter
/// group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// Consecutive blocks with the given fractions of `n`; the test block
    /// takes the remainder.
    pub fn proportional(n: usize, train: f64, val: f64) -> Self {
        let a = (n as f64 * train).round() as usize;
        let b = a + (n as f64 * val).round() as usize;
        Self {
            train: 0..a,
            val: a..b.min(n),
            test: b.min(n)..n,
        }
    }

    fn check(&self, n: usize) -> Result<(), DataError> {
        let rs = [&self.train, &self.val, &self.test];
        for r in rs {
            if r.start > r.end || r.end > n {
                return Err(DataError::Split(format!("range {:?} outside 0..{}", r, n)));
            }
        }
        for (i, a) in rs.iter().enumerate() {
            for b in &rs[i + 1..] {
                if a.start < b.end && b.start < a.end {
                    return Err(DataError::Split(format!(
                        "ranges {:?} and {:?} overlap",
                        a, b
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits by trajectory index ranges.
pub fn split(
    ds: &TrajectoryDataset,
    ranges: &SplitRanges,
) -> Result<(TrajectoryDataset, TrajectoryDataset, TrajectoryDataset), DataError> {
    split_groups(ds, ranges, vec![(0..ds.len()).collect()])
}

/// Applies the ranges to the trajectories of each parameter value
/// separately, for sets with a discrete list of parameter values.
pub fn split_per_param(
    ds: &TrajectoryDataset,
    ranges: &SplitRanges,
) -> Result<(TrajectoryDataset, TrajectoryDataset, TrajectoryDataset), DataError> {
    let groups = ds.param_groups().into_iter().map(|(_, m)| m).collect();
    split_groups(ds, ranges, groups)
}

fn split_groups(
    ds: &TrajectoryDataset,
    ranges: &SplitRanges,
    groups: Vec<Vec<usize>>,
) -> Result<(TrajectoryDataset, TrajectoryDataset, TrajectoryDataset), DataError> {
    let mut idx: [Vec<usize>; 3] = [vec![], vec![], vec![]];
    for members in &groups {
        ranges.check(members.len())?;
        for (k, r) in [&ranges.train, &ranges.val, &ranges.test]
            .into_iter()
            .enumerate()
        {
            idx[k].extend_from_slice(&members[r.clone()]);
        }
    }
    Ok((
        ds.subset(&idx[0])?,
        ds.subset(&idx[1])?,
        ds.subset(&idx[2])?,
    ))
}

const MAGIC: &[u8; 6] = b"LNPDS1";

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    times: TimeGrid,
    channels: usize,
    param_ranges: Vec<ParamRange>,
    trajectories: usize,
    params: Vec<f64>,
    norm: Option<NormStats>,
    normalized: bool,
    provenance: Provenance,
}

impl TrajectoryDataset {
    /// Writes the container: magic, header length (u32 LE), JSON header,
    /// then every field value as a little-endian f32 in
    /// `[traj, time, channel, spatial...]` order. The file is written to a
    /// temporary path and renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let header = Header {
            grid: self.grid.clone(),
            times: self.times.clone(),
            channels: self.channels,
            param_ranges: self.param_ranges.clone(),
            trajectories: self.len(),
            params: self.params.clone(),
            norm: self.norm.clone(),
            normalized: self.normalized,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(MAGIC)?;
            w.write_all(&(json.len() as u32).to_le_bytes())?;
            w.write_all(&json)?;
            for v in &self.fields {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| DataError::Io(e.error))?;
        Ok(())
    }

    /// Reads a container written by [`save`](Self::save) or by an external
    /// tool following the same layout (the import path for ingested data).
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DataError::Format(format!(
                "{} is not a dataset file",
                path.display()
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        h.grid.validate()?;
        let count = h.trajectories * h.channels * h.grid.len() * h.times.frames();
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != count * 4 {
            return Err(DataError::Format(format!(
                "expected {} field bytes, found {}",
                count * 4,
                raw.len()
            )));
        }
        let fields = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let ds = Self {
            grid: h.grid,
            times: h.times,
            channels: h.channels,
            param_ranges: h.param_ranges,
            fields,
            params: h.params,
            norm: h.norm,
            normalized: h.normalized,
            provenance: h.provenance,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, mus: &[f64]) -> TrajectoryDataset {
        let grid = GridSpec::periodic_1d(4, 0.0, 1.0).unwrap();
        let times = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let mut trajs = Vec::new();
        for &mu in mus {
            for r in 0..n {
                let frames = (0..3)
                    .map(|i| {
                        (0..4)
                            .map(|j| mu + (r * 12 + i * 4 + j) as f64 * 0.25)
                            .collect()
                    })
                    .collect();
                trajs.push((frames, vec![mu]));
            }
        }
        TrajectoryDataset::from_trajectories(
            grid,
            times,
            1,
            vec![ParamRange::new("zeta", 0.0, 10.0)],
            trajs,
            Provenance::default(),
        )
        .unwrap()
    }

    #[test]
    fn normalization_maps_to_unit_interval_and_back() {
        let ds = toy(3, &[0.5, 2.0]);
        let stats = NormStats::compute(&ds, true).unwrap();
        let n = normalize(&ds, &stats).unwrap();
        let mm = MinMax::of(n.fields().iter().copied());
        assert_eq!((mm.min, mm.max), (0.0, 1.0));
        let p = MinMax::of(n.params().iter().copied());
        assert_eq!((p.min, p.max), (0.0, 1.0));
        let back = denormalize(&n, &stats).unwrap();
        for (a, b) in back.fields().iter().zip(ds.fields()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn unnormalized_fields_pass_through() {
        let ds = toy(2, &[0.5, 2.0]);
        let stats = NormStats::compute(&ds, false).unwrap();
        let n = normalize(&ds, &stats).unwrap();
        assert_eq!(n.fields(), ds.fields());
        assert_ne!(n.params(), ds.params());
    }

    #[test]
    fn degenerate_range_rejected() {
        let ds = toy(2, &[0.5]);
        assert!(matches!(
            NormStats::compute(&ds, true),
            Err(DataError::DegenerateRange(_))
        ));
    }

    #[test]
    fn paper_and_desk_split_sizes() {
        let s = SplitRanges::proportional(10000, 0.8, 0.1);
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (8000, 1000, 1000)
        );
        let s = SplitRanges::proportional(640, 0.8, 0.1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (512, 64, 64));
        let s = SplitRanges {
            train: 0..5000,
            val: 5000..5200,
            test: 5200..5300,
        };
        s.check(5300).unwrap();
    }

    #[test]
    fn split_is_per_parameter_value() {
        let ds = toy(10, &[0.5, 2.0]);
        let (tr, va, te) = split_per_param(&ds, &SplitRanges::proportional(10, 0.8, 0.1)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (16, 2, 2));
        assert_eq!(tr.param_groups().len(), 2);
        assert_eq!(te.params(), &[0.5, 2.0]);
    }

    #[test]
    fn plain_split_ignores_parameter_groups() {
        let ds = toy(5, &[0.5, 2.0]);
        let (tr, va, te) = split(&ds, &SplitRanges::proportional(10, 0.8, 0.1)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
        assert_eq!(te.params(), &[2.0]);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let ds = toy(10, &[0.5]);
        let bad = SplitRanges {
            train: 0..6,
            val: 5..8,
            test: 8..10,
        };
        assert!(matches!(split(&ds, &bad), Err(DataError::Split(_))));
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.lnpds");
        let mut ds = toy(3, &[0.3, 0.7]);
        ds.norm = Some(NormStats::compute(&ds, true).unwrap());
        ds.save(&path).unwrap();
        let back = TrajectoryDataset::load(&path).unwrap();
        assert_eq!(back, ds);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"LNPDS1");
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.lnpds");
        toy(2, &[0.3]).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            TrajectoryDataset::load(&path),
            Err(DataError::Format(_))
        ));
    }
}
