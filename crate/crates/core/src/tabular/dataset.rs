use rand::seq::SliceRandom;
use std::io::{Read, Write};
use std::sync::Arc;

use super::schema::{CovariateKind, CovariateSchema, CovariateValue, RefugeeRecord};
use super::TabularError;
use crate::seeds::{digest_hex, rng_from_seed};

const PROPENSITY_SUM_TOL: f64 = 1e-9;

/// Logged refugee placements: covariates, assigned location, binary
/// employment outcome and the assignment propensities in force.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<CovariateSchema>,
    n_locations: usize,
    records: Vec<RefugeeRecord>,
    locations: Vec<usize>,
    outcomes: Vec<u8>,
    propensities: Vec<Arc<[f64]>>,
}

impl Dataset {
    pub fn new(
        schema: Arc<CovariateSchema>,
        n_locations: usize,
        records: Vec<RefugeeRecord>,
        locations: Vec<usize>,
        outcomes: Vec<u8>,
        propensities: Vec<Arc<[f64]>>,
    ) -> Result<Self, TabularError> {
        let n = records.len();
        if locations.len() != n || outcomes.len() != n || propensities.len() != n {
            return Err(TabularError::InvalidDataset(format!(
                "column lengths differ: records {n}, locations {}, outcomes {}, propensities {}",
                locations.len(),
                outcomes.len(),
                propensities.len()
            )));
        }
        if n_locations == 0 {
            return Err(TabularError::InvalidDataset("no locations".into()));
        }
        for (i, record) in records.iter().enumerate() {
            schema.validate(record).map_err(|e| {
                TabularError::InvalidDataset(format!("row {i}: {e}"))
            })?;
            if locations[i] >= n_locations {
                return Err(TabularError::LocationOutOfRange {
                    location: locations[i],
                    n_locations,
                });
            }
            if outcomes[i] > 1 {
                return Err(TabularError::InvalidDataset(format!(
                    "row {i}: outcome {} is not binary",
                    outcomes[i]
                )));
            }
            check_propensities(&propensities[i], n_locations)
                .map_err(|e| TabularError::InvalidDataset(format!("row {i}: {e}")))?;
        }
        Ok(Self {
            schema,
            n_locations,
            records,
            locations,
            outcomes,
            propensities,
        })
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RefugeeRecord] {
        &self.records
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn propensities(&self) -> &[Arc<[f64]>] {
        &self.propensities
    }

    /// Count of employed refugees in the log.
    pub fn observed_count(&self) -> f64 {
        self.outcomes.iter().map(|&y| y as f64).sum()
    }

    pub fn observed_rate(&self) -> f64 {
        self.observed_count() / self.len() as f64
    }

    /// Row indices logged at `location`, ascending.
    pub fn indices_at(&self, location: usize) -> Vec<usize> {
        self.locations
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == location)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows in the given order; indices may repeat (bootstrap resamples).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            n_locations: self.n_locations,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            locations: indices.iter().map(|&i| self.locations[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            propensities: indices.iter().map(|&i| Arc::clone(&self.propensities[i])).collect(),
        }
    }

    /// Replace the logged assignments and outcomes, keeping covariates.
    pub fn with_assignments(
        &self,
        locations: Vec<usize>,
        outcomes: Vec<u8>,
        propensities: Vec<Arc<[f64]>>,
    ) -> Result<Dataset, TabularError> {
        Dataset::new(
            Arc::clone(&self.schema),
            self.n_locations,
            self.records.clone(),
            locations,
            outcomes,
            propensities,
        )
    }

    /// Write `covariates..., location, outcome, p_0..p_{L-1}`. Categorical
    /// covariates are written by label; numbers use Rust's shortest
    /// round-trip formatting, so output is byte-stable.
    /// Hash of the CSV serialization.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        self.write_csv(&mut bytes).expect("writing to memory");
        digest_hex(&bytes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TabularError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self
            .schema
            .descriptors()
            .iter()
            .map(|d| d.name.clone())
            .collect();
        header.push("location".into());
        header.push("outcome".into());
        header.extend((0..self.n_locations).map(|t| format!("p_{t}")));
        w.write_record(&header)?;

        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            for (d, v) in self.schema.descriptors().iter().zip(&self.records[i].values) {
                match (&d.kind, v) {
                    (CovariateKind::Categorical { categories }, CovariateValue::Category(k)) => {
                        row.push(categories[*k].clone())
                    }
                    (_, CovariateValue::Numeric(x)) => row.push(x.to_string()),
                    (_, CovariateValue::Category(k)) => row.push(k.to_string()),
                }
            }
            row.push(self.locations[i].to_string());
            row.push(self.outcomes[i].to_string());
            row.extend(self.propensities[i].iter().map(|p| p.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| TabularError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, schema: Arc<CovariateSchema>) -> Result<Dataset, TabularError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let k = schema.len();
        if header.len() < k + 3 {
            return Err(TabularError::Csv(format!(
                "expected at least {} columns, found {}",
                k + 3,
                header.len()
            )));
        }
        for (d, h) in schema.descriptors().iter().zip(header.iter()) {
            if d.name != h {
                return Err(TabularError::Csv(format!(
                    "header column `{h}` does not match covariate `{}`",
                    d.name
                )));
            }
        }
        if &header[k] != "location" || &header[k + 1] != "outcome" {
            return Err(TabularError::Csv("missing location/outcome columns".into()));
        }
        let n_locations = header.len() - k - 2;

        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| TabularError::Csv(format!("bad {what} value `{s}`")))
        };
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| TabularError::Csv(format!("bad {what} value `{s}`")))
        };

        let (mut records, mut locations, mut outcomes, mut propensities) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for row in r.records() {
            let row = row?;
            let mut values = Vec::with_capacity(k);
            for (d, field) in schema.descriptors().iter().zip(row.iter()) {
                let value = match &d.kind {
                    CovariateKind::Numeric { .. } => {
                        CovariateValue::Numeric(parse_f64(field, &d.name)?)
                    }
                    CovariateKind::Categorical { categories } => {
                        let idx = categories.iter().position(|c| c == field).ok_or_else(|| {
                            TabularError::Encoding {
                                name: d.name.clone(),
                                reason: format!("unknown category `{field}`"),
                            }
                        })?;
                        CovariateValue::Category(idx)
                    }
                };
                values.push(value);
            }
            records.push(RefugeeRecord::new(values));
            locations.push(parse_usize(&row[k], "location")?);
            let y = parse_usize(&row[k + 1], "outcome")?;
            outcomes.push(u8::try_from(y).unwrap_or(u8::MAX));
            let p = (0..n_locations)
                .map(|t| parse_f64(&row[k + 2 + t], "propensity"))
                .collect::<Result<Vec<_>, _>>()?;
            propensities.push(Arc::from(p));
        }
        Dataset::new(schema, n_locations, records, locations, outcomes, propensities)
    }
}

fn check_propensities(p: &[f64], n_locations: usize) -> Result<(), String> {
    if p.len() != n_locations {
        return Err(format!(
            "propensity vector has length {}, expected {n_locations}",
            p.len()
        ));
    }
    if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(format!("propensity {bad} is not strictly positive"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROPENSITY_SUM_TOL {
        return Err(format!("propensities sum to {total}, not 1"));
    }
    Ok(())
}

/// Seeded disjoint partition into parts of size `ceil(fraction * n)` and the
/// remainder. Each part keeps the original row order.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), TabularError> {
    let n = dataset.len();
    if n < 2 {
        return Err(TabularError::InvalidDataset(format!(
            "cannot split {n} rows"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TabularError::DegenerateSplit { fraction, n });
    }
    let first = (fraction * n as f64).ceil() as usize;
    if first == 0 || first >= n {
        return Err(TabularError::DegenerateSplit { fraction, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut a = order[..first].to_vec();
    let mut b = order[first..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((dataset.subset(&a), dataset.subset(&b)))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tabular::CovariateDescriptor;

    pub(crate) fn toy_dataset(n: usize) -> Dataset {
        let schema = Arc::new(
            CovariateSchema::new(vec![
                CovariateDescriptor::numeric("age", 18.0, 60.0),
                CovariateDescriptor::categorical("gender", ["female", "male"]),
            ])
            .unwrap(),
        );
        let p: Arc<[f64]> = Arc::from(vec![0.25, 0.75]);
        let records = (0..n)
            .map(|i| {
                RefugeeRecord::new(vec![
                    CovariateValue::Numeric(18.0 + (i % 40) as f64 + 0.5),
                    CovariateValue::Category(i % 2),
                ])
            })
            .collect();
        Dataset::new(
            schema,
            2,
            records,
            (0..n).map(|i| (i / 2) % 2).collect(),
            (0..n).map(|i| (i % 3 == 0) as u8).collect(),
            vec![p; n],
        )
        .unwrap()
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let data = toy_dataset(4);
        let (a, b) = split(&data, 0.5, 11).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let (a2, b2) = split(&data, 0.5, 11).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        // Rows in the toy set are distinct, so recover indices by lookup.
        let mut seen: Vec<usize> = a
            .records()
            .iter()
            .chain(b.records())
            .map(|r| data.records().iter().position(|x| x == r).unwrap())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn split_sizes_use_ceiling() {
        let data = toy_dataset(5);
        let (a, b) = split(&data, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (3, 2));
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let data = toy_dataset(5);
        assert!(matches!(split(&data, 0.0, 1), Err(TabularError::DegenerateSplit { .. })));
        assert!(matches!(split(&data, 0.99, 1), Err(TabularError::DegenerateSplit { .. })));
        assert!(split(&toy_dataset(1), 0.5, 1).is_err());
    }

    #[test]
    fn dataset_rejects_bad_propensities() {
        let data = toy_dataset(3);
        let bad: Arc<[f64]> = Arc::from(vec![0.0, 1.0]);
        let err = data.with_assignments(vec![0; 3], vec![0; 3], vec![bad; 3]);
        assert!(err.is_err());
        let unnormalized: Arc<[f64]> = Arc::from(vec![0.5, 0.6]);
        assert!(data
            .with_assignments(vec![0; 3], vec![0; 3], vec![unnormalized; 3])
            .is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = toy_dataset(7);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("age,gender,location,outcome,p_0,p_1\n"));
        let back = Dataset::read_csv(buf.as_slice(), Arc::clone(data.schema())).unwrap();
        assert_eq!(back, data);
    }
}
