use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::TabularError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric { lo: f64, hi: f64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateDescriptor {
    pub fn numeric(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Numeric { lo, hi },
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        }
    }

    /// Number of categories, or `None` for numeric covariates.
    pub fn n_categories(&self) -> Option<usize> {
        match &self.kind {
            CovariateKind::Categorical { categories } => Some(categories.len()),
            CovariateKind::Numeric { .. } => None,
        }
    }
}

/// Ordered list of covariate descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CovariateDescriptor>", into = "Vec<CovariateDescriptor>")]
pub struct CovariateSchema {
    descriptors: Vec<CovariateDescriptor>,
}

impl CovariateSchema {
    pub fn new(descriptors: Vec<CovariateDescriptor>) -> Result<Self, TabularError> {
        let mut seen = HashSet::new();
        for d in &descriptors {
            if !seen.insert(d.name.as_str()) {
                return Err(TabularError::InvalidSchema(format!(
                    "duplicate covariate name `{}`",
                    d.name
                )));
            }
            match &d.kind {
                CovariateKind::Numeric { lo, hi } => {
                    if !(lo < hi) {
                        return Err(TabularError::InvalidSchema(format!(
                            "numeric covariate `{}` needs lo < hi, got ({lo}, {hi})",
                            d.name
                        )));
                    }
                }
                CovariateKind::Categorical { categories } => {
                    if categories.len() < 2 {
                        return Err(TabularError::InvalidSchema(format!(
                            "categorical covariate `{}` needs at least 2 categories",
                            d.name
                        )));
                    }
                    let distinct: HashSet<_> = categories.iter().collect();
                    if distinct.len() != categories.len() {
                        return Err(TabularError::InvalidSchema(format!(
                            "categorical covariate `{}` repeats a category",
                            d.name
                        )));
                    }
                }
            }
        }
        Ok(Self { descriptors })
    }

    pub fn descriptors(&self) -> &[CovariateDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.descriptors.iter().position(|d| d.name == name)
    }

    /// Check a record against the schema, naming the first offending covariate.
    pub fn validate(&self, record: &RefugeeRecord) -> Result<(), TabularError> {
        if record.values.len() != self.descriptors.len() {
            return Err(TabularError::RecordLength {
                expected: self.descriptors.len(),
                got: record.values.len(),
            });
        }
        for (d, v) in self.descriptors.iter().zip(&record.values) {
            match (&d.kind, v) {
                (CovariateKind::Numeric { lo, hi }, CovariateValue::Numeric(x)) => {
                    if !(x.is_finite() && *lo <= *x && *x <= *hi) {
                        return Err(TabularError::Encoding {
                            name: d.name.clone(),
                            reason: format!("value {x} outside bounds [{lo}, {hi}]"),
                        });
                    }
                }
                (CovariateKind::Categorical { categories }, CovariateValue::Category(k)) => {
                    if *k >= categories.len() {
                        return Err(TabularError::Encoding {
                            name: d.name.clone(),
                            reason: format!(
                                "category index {k} out of range for {} categories",
                                categories.len()
                            ),
                        });
                    }
                }
                (CovariateKind::Numeric { .. }, CovariateValue::Category(_)) => {
                    return Err(TabularError::Encoding {
                        name: d.name.clone(),
                        reason: "expected a numeric value, got a category".into(),
                    })
                }
                (CovariateKind::Categorical { .. }, CovariateValue::Numeric(_)) => {
                    return Err(TabularError::Encoding {
                        name: d.name.clone(),
                        reason: "expected a category, got a numeric value".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<CovariateDescriptor>> for CovariateSchema {
    type Error = TabularError;

    fn try_from(descriptors: Vec<CovariateDescriptor>) -> Result<Self, Self::Error> {
        CovariateSchema::new(descriptors)
    }
}

impl From<CovariateSchema> for Vec<CovariateDescriptor> {
    fn from(schema: CovariateSchema) -> Self {
        schema.descriptors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Numeric(f64),
    Category(usize),
}

impl CovariateValue {
    pub fn as_category(&self) -> Option<usize> {
        match self {
            CovariateValue::Category(k) => Some(*k),
            CovariateValue::Numeric(_) => None,
        }
    }

    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            CovariateValue::Numeric(x) => Some(*x),
            CovariateValue::Category(_) => None,
        }
    }
}

/// One refugee's covariates, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefugeeRecord {
    pub values: Vec<CovariateValue>,
}

impl RefugeeRecord {
    pub fn new(values: Vec<CovariateValue>) -> Self {
        Self { values }
    }
}
