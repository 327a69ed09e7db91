//! Per-thread counters of component invocations, used to verify which
//! pipeline stages a detector actually runs.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

thread_local! {
    static BOOTSTRAP_DRAWS: Cell<usize> = const { Cell::new(0) };
    static VARIANCE_FITS: Cell<usize> = const { Cell::new(0) };
    static LSTM_FITS: Cell<usize> = const { Cell::new(0) };
    static RNN_FITS: Cell<usize> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Component {
    BootstrapDraw,
    VarianceFit,
    LstmFit,
    RnnFit,
}

pub(crate) fn record(c: Component) {
    let cell = match c {
        Component::BootstrapDraw => &BOOTSTRAP_DRAWS,
        Component::VarianceFit => &VARIANCE_FITS,
        Component::LstmFit => &LSTM_FITS,
        Component::RnnFit => &RNN_FITS,
    };
    cell.with(|n| n.set(n.get() + 1));
}

/// Component invocation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub bootstrap_draws: usize,
    pub variance_fits: usize,
    pub lstm_fits: usize,
    pub rnn_fits: usize,
}

impl Audit {
    fn snapshot() -> Self {
        Self {
            bootstrap_draws: BOOTSTRAP_DRAWS.with(Cell::get),
            variance_fits: VARIANCE_FITS.with(Cell::get),
            lstm_fits: LSTM_FITS.with(Cell::get),
            rnn_fits: RNN_FITS.with(Cell::get),
        }
    }

    /// Runs `f` and counts the components it invoked on this thread.
    pub fn capture<T>(f: impl FnOnce() -> T) -> (T, Audit) {
        let before = Self::snapshot();
        let out = f();
        let after = Self::snapshot();
        (
            out,
            Audit {
                bootstrap_draws: after.bootstrap_draws - before.bootstrap_draws,
                variance_fits: after.variance_fits - before.variance_fits,
                lstm_fits: after.lstm_fits - before.lstm_fits,
                rnn_fits: after.rnn_fits - before.rnn_fits,
            },
        )
    }
}
