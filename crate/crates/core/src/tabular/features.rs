//! Feature maps φ(record, location).
//!
//! Layout of the covariate block, in schema order: a numeric covariate emits
//! one standardized column; a categorical covariate emits one indicator per
//! category, reference level included. After the covariate block come the
//! location indicators (when the mode has them) and then the interaction
//! block. Interaction feature `(i, j)` (covariate column `i`, location `j`)
//! lives at `covariate_dim + L + i * L + j`.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::schema::{CovariateKind, CovariateSchema, CovariateValue, RefugeeRecord};
use super::TabularError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `[covariates]`; the location argument is ignored.
    CovariatesOnly,
    /// `[covariates, location one-hot]`.
    CovariatesPlusLocation,
    /// `[covariates, location one-hot, covariates ⊗ location one-hot]`.
    Interactions,
    /// `[t, covariates, t · covariates]` for a binary treatment `t ∈ {0, 1}`
    /// (two locations). This is the single-interaction layout of the ridge
    /// example.
    TreatmentInteraction,
}

impl FeatureMode {
    pub fn uses_location(self) -> bool {
        !matches!(self, FeatureMode::CovariatesOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, scale: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    schema: Arc<CovariateSchema>,
    n_locations: usize,
    mode: FeatureMode,
    /// One entry per descriptor; `None` for categorical covariates.
    standardizers: Vec<Option<Standardizer>>,
    offsets: Vec<usize>,
    covariate_dim: usize,
    dim: usize,
}

impl FeatureMap {
    /// A map with identity standardization (raw numeric values).
    pub fn new(
        schema: Arc<CovariateSchema>,
        n_locations: usize,
        mode: FeatureMode,
    ) -> Result<Self, TabularError> {
        let standardizers = schema
            .descriptors()
            .iter()
            .map(|d| match d.kind {
                CovariateKind::Numeric { .. } => Some(Standardizer::IDENTITY),
                CovariateKind::Categorical { .. } => None,
            })
            .collect();
        Self::with_standardizers(schema, n_locations, mode, standardizers)
    }

    /// Freeze numeric standardization (sample mean and n−1 standard
    /// deviation) on `records`. Constant columns keep scale 1.
    pub fn fit(
        schema: Arc<CovariateSchema>,
        n_locations: usize,
        mode: FeatureMode,
        records: &[RefugeeRecord],
    ) -> Result<Self, TabularError> {
        let mut standardizers = Vec::with_capacity(schema.len());
        for (k, d) in schema.descriptors().iter().enumerate() {
            match d.kind {
                CovariateKind::Categorical { .. } => standardizers.push(None),
                CovariateKind::Numeric { .. } => {
                    let values: Vec<f64> = records
                        .iter()
                        .map(|r| {
                            r.values.get(k).and_then(CovariateValue::as_numeric).ok_or_else(|| {
                                TabularError::Encoding {
                                    name: d.name.clone(),
                                    reason: "missing numeric value while fitting standardization"
                                        .into(),
                                }
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    standardizers.push(Some(fit_standardizer(&values)));
                }
            }
        }
        Self::with_standardizers(schema, n_locations, mode, standardizers)
    }

    fn with_standardizers(
        schema: Arc<CovariateSchema>,
        n_locations: usize,
        mode: FeatureMode,
        standardizers: Vec<Option<Standardizer>>,
    ) -> Result<Self, TabularError> {
        if n_locations == 0 {
            return Err(TabularError::InvalidSchema("feature map needs at least one location".into()));
        }
        if mode == FeatureMode::TreatmentInteraction && n_locations != 2 {
            return Err(TabularError::InvalidSchema(format!(
                "treatment-interaction layout needs exactly 2 locations, got {n_locations}"
            )));
        }
        let mut offsets = Vec::with_capacity(schema.len());
        let mut covariate_dim = 0;
        for d in schema.descriptors() {
            offsets.push(covariate_dim);
            covariate_dim += d.n_categories().unwrap_or(1);
        }
        let dim = match mode {
            FeatureMode::CovariatesOnly => covariate_dim,
            FeatureMode::CovariatesPlusLocation => covariate_dim + n_locations,
            FeatureMode::Interactions => covariate_dim + n_locations + covariate_dim * n_locations,
            FeatureMode::TreatmentInteraction => 1 + 2 * covariate_dim,
        };
        Ok(Self {
            schema,
            n_locations,
            mode,
            standardizers,
            offsets,
            covariate_dim,
            dim,
        })
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn standardizer(&self, descriptor: usize) -> Option<Standardizer> {
        self.standardizers.get(descriptor).copied().flatten()
    }

    /// Column offset of each descriptor inside the covariate block.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Human-readable names in emitted order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut cov = Vec::with_capacity(self.covariate_dim);
        for d in self.schema.descriptors() {
            match &d.kind {
                CovariateKind::Numeric { .. } => cov.push(d.name.clone()),
                CovariateKind::Categorical { categories } => {
                    cov.extend(categories.iter().map(|c| format!("{}={c}", d.name)))
                }
            }
        }
        let locs: Vec<String> = (0..self.n_locations).map(|t| format!("loc={t}")).collect();
        match self.mode {
            FeatureMode::CovariatesOnly => cov,
            FeatureMode::CovariatesPlusLocation => [cov, locs].concat(),
            FeatureMode::Interactions => {
                let inter: Vec<String> = cov
                    .iter()
                    .flat_map(|c| locs.iter().map(move |l| format!("{c}*{l}")))
                    .collect();
                [cov, locs, inter].concat()
            }
            FeatureMode::TreatmentInteraction => {
                let inter: Vec<String> = cov.iter().map(|c| format!("t*{c}")).collect();
                [vec!["t".to_string()], cov, inter].concat()
            }
        }
    }

    fn check_location(&self, location: usize) -> Result<(), TabularError> {
        if self.mode.uses_location() && location >= self.n_locations {
            return Err(TabularError::LocationOutOfRange {
                location,
                n_locations: self.n_locations,
            });
        }
        Ok(())
    }

    /// Nonzero entries of the covariate block, ascending by column.
    fn covariate_entries(
        &self,
        record: &RefugeeRecord,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<(), TabularError> {
        self.schema.validate(record)?;
        for (k, v) in record.values.iter().enumerate() {
            let base = self.offsets[k];
            match v {
                CovariateValue::Numeric(x) => {
                    let s = self.standardizers[k].unwrap_or(Standardizer::IDENTITY);
                    let z = s.apply(*x);
                    if z != 0.0 {
                        out.push((base, z));
                    }
                }
                CovariateValue::Category(c) => out.push((base + c, 1.0)),
            }
        }
        Ok(())
    }

    /// Dense covariate block (length `covariate_dim`).
    pub fn covariate_block(&self, record: &RefugeeRecord) -> Result<Vec<f64>, TabularError> {
        let mut entries = Vec::with_capacity(record.values.len());
        self.covariate_entries(record, &mut entries)?;
        let mut block = vec![0.0; self.covariate_dim];
        for (j, v) in entries {
            block[j] = v;
        }
        Ok(block)
    }

    /// Nonzero features of φ(record, location), ascending by index.
    pub fn encode_sparse(
        &self,
        record: &RefugeeRecord,
        location: usize,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<(), TabularError> {
        self.check_location(location)?;
        out.clear();
        let mut cov = Vec::with_capacity(record.values.len());
        self.covariate_entries(record, &mut cov)?;
        let l = self.n_locations;
        match self.mode {
            FeatureMode::CovariatesOnly => out.extend_from_slice(&cov),
            FeatureMode::CovariatesPlusLocation => {
                out.extend_from_slice(&cov);
                out.push((self.covariate_dim + location, 1.0));
            }
            FeatureMode::Interactions => {
                out.extend_from_slice(&cov);
                out.push((self.covariate_dim + location, 1.0));
                let base = self.covariate_dim + l;
                out.extend(cov.iter().map(|&(i, v)| (base + i * l + location, v)));
            }
            FeatureMode::TreatmentInteraction => {
                let t = location as f64;
                if t != 0.0 {
                    out.push((0, t));
                }
                out.extend(cov.iter().map(|&(i, v)| (1 + i, v)));
                if t != 0.0 {
                    out.extend(cov.iter().map(|&(i, v)| (1 + self.covariate_dim + i, t * v)));
                }
            }
        }
        Ok(())
    }

    /// Dense φ(record, location) of length [`dim`](Self::dim).
    pub fn encode(&self, record: &RefugeeRecord, location: usize) -> Result<Vec<f64>, TabularError> {
        let mut entries = Vec::new();
        self.encode_sparse(record, location, &mut entries)?;
        let mut x = vec![0.0; self.dim];
        for (j, v) in entries {
            x[j] = v;
        }
        Ok(x)
    }

    /// Recover category indices (one per categorical descriptor, in schema
    /// order) and the location from the one-hot blocks of an encoded vector.
    pub fn decode_one_hot(&self, x: &[f64]) -> Result<(Vec<usize>, Option<usize>), TabularError> {
        if x.len() != self.dim {
            return Err(TabularError::InvalidDataset(format!(
                "encoded vector has length {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        let cov_start = if self.mode == FeatureMode::TreatmentInteraction { 1 } else { 0 };
        let mut categories = Vec::new();
        for (k, d) in self.schema.descriptors().iter().enumerate() {
            if let Some(n) = d.n_categories() {
                let start = cov_start + self.offsets[k];
                let hot = one_hot_index(&x[start..start + n]).ok_or_else(|| TabularError::Encoding {
                    name: d.name.clone(),
                    reason: "one-hot block does not contain exactly one 1".into(),
                })?;
                categories.push(hot);
            }
        }
        let location = match self.mode {
            FeatureMode::CovariatesOnly => None,
            FeatureMode::CovariatesPlusLocation | FeatureMode::Interactions => {
                let start = self.covariate_dim;
                Some(one_hot_index(&x[start..start + self.n_locations]).ok_or_else(|| {
                    TabularError::InvalidDataset("location block is not one-hot".into())
                })?)
            }
            FeatureMode::TreatmentInteraction => Some(if x[0] == 0.0 { 0 } else { 1 }),
        };
        Ok((categories, location))
    }
}

fn one_hot_index(block: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in block.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

fn fit_standardizer(values: &[f64]) -> Standardizer {
    let n = values.len();
    if n < 2 {
        return Standardizer {
            mean: values.first().copied().unwrap_or(0.0),
            scale: 1.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Standardizer {
        mean,
        scale: if sd > 0.0 { sd } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::CovariateDescriptor;
    use proptest::prelude::*;

    fn binary_schema() -> Arc<CovariateSchema> {
        Arc::new(CovariateSchema::new(vec![CovariateDescriptor::categorical("x", ["0", "1"])]).unwrap())
    }

    fn mixed_schema() -> Arc<CovariateSchema> {
        Arc::new(
            CovariateSchema::new(vec![
                CovariateDescriptor::numeric("age", 18.0, 60.0),
                CovariateDescriptor::categorical("edu", ["none", "some", "uni"]),
                CovariateDescriptor::categorical("english", ["no", "yes"]),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn one_hot_interaction_layout() {
        let map = FeatureMap::new(binary_schema(), 2, FeatureMode::Interactions).unwrap();
        let r = RefugeeRecord::new(vec![CovariateValue::Category(1)]);
        // [x=0, x=1 | loc0, loc1 | x0*l0, x0*l1, x1*l0, x1*l1]
        assert_eq!(map.encode(&r, 1).unwrap(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(map.dim(), 8);
    }

    #[test]
    fn treatment_interaction_layout_matches_ridge_example() {
        let schema =
            Arc::new(CovariateSchema::new(vec![CovariateDescriptor::numeric("x", -10.0, 10.0)]).unwrap());
        let map = FeatureMap::new(schema, 2, FeatureMode::TreatmentInteraction).unwrap();
        let r = RefugeeRecord::new(vec![CovariateValue::Numeric(0.5)]);
        assert_eq!(map.encode(&r, 1).unwrap(), vec![1.0, 0.5, 0.5]);
        assert_eq!(map.encode(&r, 0).unwrap(), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn covariates_only_ignores_location() {
        let map = FeatureMap::new(mixed_schema(), 5, FeatureMode::CovariatesOnly).unwrap();
        let r = RefugeeRecord::new(vec![
            CovariateValue::Numeric(33.0),
            CovariateValue::Category(2),
            CovariateValue::Category(0),
        ]);
        let base = map.encode(&r, 0).unwrap();
        for t in 1..5 {
            assert_eq!(map.encode(&r, t).unwrap(), base);
        }
    }

    #[test]
    fn encoding_errors_name_the_descriptor() {
        let map = FeatureMap::new(mixed_schema(), 2, FeatureMode::Interactions).unwrap();
        let r = RefugeeRecord::new(vec![
            CovariateValue::Numeric(33.0),
            CovariateValue::Numeric(1.0),
            CovariateValue::Category(0),
        ]);
        match map.encode(&r, 0) {
            Err(TabularError::Encoding { name, .. }) => assert_eq!(name, "edu"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = RefugeeRecord::new(vec![
            CovariateValue::Numeric(33.0),
            CovariateValue::Category(1),
            CovariateValue::Category(0),
        ]);
        assert!(matches!(map.encode(&ok, 2), Err(TabularError::LocationOutOfRange { .. })));
    }

    #[test]
    fn feature_names_follow_layout() {
        let map = FeatureMap::new(binary_schema(), 2, FeatureMode::Interactions).unwrap();
        assert_eq!(
            map.feature_names(),
            vec!["x=0", "x=1", "loc=0", "loc=1", "x=0*loc=0", "x=0*loc=1", "x=1*loc=0", "x=1*loc=1"]
        );
    }

    fn arb_record() -> impl Strategy<Value = RefugeeRecord> {
        (18.0f64..60.0, 0usize..3, 0usize..2).prop_map(|(a, e, g)| {
            RefugeeRecord::new(vec![
                CovariateValue::Numeric(a),
                CovariateValue::Category(e),
                CovariateValue::Category(g),
            ])
        })
    }

    proptest! {
        #[test]
        fn decode_recovers_categories_and_location(r in arb_record(), t in 0usize..4) {
            let map = FeatureMap::new(mixed_schema(), 4, FeatureMode::Interactions).unwrap();
            let x = map.encode(&r, t).unwrap();
            let (cats, loc) = map.decode_one_hot(&x).unwrap();
            prop_assert_eq!(cats, vec![r.values[1].as_category().unwrap(), r.values[2].as_category().unwrap()]);
            prop_assert_eq!(loc, Some(t));
        }

        #[test]
        fn interaction_block_is_outer_product(r in arb_record(), t in 0usize..4) {
            let map = FeatureMap::new(mixed_schema(), 4, FeatureMode::Interactions).unwrap();
            let x = map.encode(&r, t).unwrap();
            let cov = map.covariate_block(&r).unwrap();
            let (m, l) = (map.covariate_dim(), 4);
            for i in 0..m {
                for j in 0..l {
                    let expected = cov[i] * if j == t { 1.0 } else { 0.0 };
                    prop_assert_eq!(x[m + l + i * l + j], expected);
                }
            }
            prop_assert_eq!(&x[..m], &cov[..]);
        }
    }

    #[test]
    fn fitted_standardization_centers_and_scales() {
        use rand::Rng;
        let mut rng = crate::seeds::rng_from_seed(5);
        let records: Vec<RefugeeRecord> = (0..1000)
            .map(|_| {
                RefugeeRecord::new(vec![
                    CovariateValue::Numeric(rng.random_range(18.0..60.0)),
                    CovariateValue::Category(rng.random_range(0..3)),
                    CovariateValue::Category(rng.random_range(0..2)),
                ])
            })
            .collect();
        let map = FeatureMap::fit(mixed_schema(), 3, FeatureMode::CovariatesOnly, &records).unwrap();
        let col: Vec<f64> = records.iter().map(|r| map.encode(r, 0).unwrap()[0]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((sd - 1.0).abs() < 1e-9, "sd {sd}");
    }
}
