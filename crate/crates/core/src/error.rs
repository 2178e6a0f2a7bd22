use thiserror::Error;

use crate::env::EnvError;
use crate::expert::ExpertError;
use crate::help::HelpError;
use crate::learn::LearnError;
use crate::metrics::MetricsError;
use crate::nnet::NnetError;
use crate::runner::RunnerError;
use crate::trace::TraceError;

/// Union of every component error, for callers that wire several modules together.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Help(#[from] HelpError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}
