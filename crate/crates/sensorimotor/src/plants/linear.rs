//! Exactly linear diagnostic plant y = A x, used to validate the closed-loop
//! decay law and the estimators' exact-recovery properties.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::types::{BoxDomain, Configuration, FeatureVector};

use super::{Plant, PlantSpec, SensorReading};

pub struct LinearPlant {
    spec: PlantSpec,
    map: DMatrix<f64>,
}

impl LinearPlant {
    pub fn new(map: DMatrix<f64>, x0: Configuration, workspace: BoxDomain) -> Result<Self> {
        let (m, n) = (map.nrows(), map.ncols());
        Ok(Self {
            spec: PlantSpec::new(n, m, x0, workspace, 0.0, 0)?,
            map,
        })
    }

    /// A full-row-rank 2x3 default over a generous workspace.
    pub fn default_wide() -> Self {
        let map = DMatrix::from_row_slice(2, 3, &[1.0, 0.3, -0.2, -0.4, 0.9, 0.5]);
        let x0 = Configuration::from_slice(&[0.5, -0.5, 0.2]).unwrap();
        let workspace =
            BoxDomain::from_bounds(&[(-10.0, 10.0), (-10.0, 10.0), (-10.0, 10.0)]).unwrap();
        Self::new(map, x0, workspace).expect("valid default")
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }
}

impl Plant for LinearPlant {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn raw_sensor(&self, x: &DVector<f64>) -> SensorReading {
        SensorReading::new(&self.map * x).expect("finite reading")
    }

    fn features(&self, s: &SensorReading) -> FeatureVector {
        FeatureVector::new(s.as_vector().clone()).expect("finite features")
    }
}
