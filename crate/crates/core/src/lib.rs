//! Poisson autoregressions for count time series: conditional maximum
//! likelihood, tests for a change in the parameter, critical values,
//! simulation studies and goodness-of-fit diagnostics.

pub mod changepoint;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod nulldist;
pub mod rng;
pub mod series;
pub mod study;

pub use changepoint::{Statistic, TestConfig, TestReport};
pub use error::{Error, Result};
pub use estimate::{fit_mle, FitOptions, FitResult};
pub use model::{Family, ModelSpec, ParamVector};
pub use nulldist::{CriticalValues, QuantileCache};
pub use series::{CountSeries, Segment};
pub use study::{ChangeScenario, StudyConfig};
