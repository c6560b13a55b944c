/// What [`EarlyStopping::observe`] decided about one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// New best; snapshot the weights.
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss. Epochs are numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        // NaN compares false and so never counts as an improvement.
        if val_loss < self.best || (self.best_epoch == 0 && !val_loss.is_nan()) {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// `(epochs run, best epoch)` for a loss sequence, `epochs = losses.len()`.
pub fn stopping_trace(losses: &[f64], patience: usize) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    for (i, &l) in losses.iter().enumerate() {
        if es.observe(i + 1, l) == Verdict::Stop {
            return (i + 1, es.best_epoch());
        }
    }
    (losses.len(), es.best_epoch())
}

/// Outcome of [`run_with_early_stopping`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedRun<W> {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    /// Snapshot taken after the best epoch; `None` only if no epoch ran.
    pub best: Option<W>,
}

/// Runs `epoch(state, e)` for `e = 1..=max_epochs`, each returning a
/// validation loss, and snapshots the state whenever the loss improves.
/// Stops once `patience` epochs in a row fail to improve.
pub fn run_with_early_stopping<S: ?Sized, W, E>(
    state: &mut S,
    max_epochs: usize,
    patience: usize,
    mut epoch: impl FnMut(&mut S, usize) -> Result<f64, E>,
    snapshot: impl Fn(&S) -> W,
) -> Result<StoppedRun<W>, E> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best = None;
    let mut epochs_run = 0;
    let mut stopped_early = false;
    for e in 1..=max_epochs {
        let loss = epoch(state, e)?;
        epochs_run = e;
        match stopper.observe(e, loss) {
            Verdict::Improved => best = Some(snapshot(state)),
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(StoppedRun {
        epochs_run,
        best_epoch: stopper.best_epoch(),
        best_loss: stopper.best_loss(),
        stopped_early,
        best,
    })
}
