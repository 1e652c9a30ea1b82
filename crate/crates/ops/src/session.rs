//! A live, replayable simulation session.
//!
//! Every mutation goes through [`Session::apply`], which validates the
//! command, executes it and appends it to the event log. Replaying the log
//! against the same calibration rebuilds the state bit for bit, because the
//! log carries every seed and [`CoreSim::advance_step`] is a pure function
//! of state and controls.

use std::io::Write as _;
use std::path::Path;

use pebble_core::features::NoisePolicy;
use pebble_core::runin::{choose_controls, ControlChoice, GoalSchedule, GridPoint, ReactivityPredictor};
use pebble_core::sequence::{OperationSequence, Provenance, Recorder, StartKind, StepRecord};
use pebble_core::sim::{ControlVector, CoreSim, CoreState, SimConfig};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{OpsError, Result};

pub const EVENTS_KIND: &str = "events";

/// Largest `count` accepted by one step command.
pub const MAX_STEPS_PER_COMMAND: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Event {
    /// Always the first event.
    Created {
        session_id: String,
        start: StartKind,
        seed: u64,
        /// Noise-free steps used to reach the equilibrium start.
        equilibrium_steps: usize,
        tally_noise: bool,
        feature_noise: NoisePolicy,
    },
    SetControls {
        controls: ControlVector,
    },
    Step {
        count: usize,
    },
}

pub struct Session {
    id: String,
    sim: CoreSim,
    state: CoreState,
    controls: ControlVector,
    recorder: Recorder,
    history: Vec<StepRecord>,
    events: Vec<Event>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("step_index", &self.state.step_index)
            .field("events", &self.events.len())
            .finish()
    }
}

/// How a new session starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub start: StartKind,
    pub seed: u64,
    pub equilibrium_steps: usize,
    pub tally_noise: bool,
    pub feature_noise: NoisePolicy,
}

impl SessionSpec {
    pub fn new(start: StartKind, seed: u64) -> Self {
        Self {
            session_id: format!("session-{seed}"),
            start,
            seed,
            equilibrium_steps: 480,
            tally_noise: true,
            feature_noise: NoisePolicy {
                rng_seed: seed,
                ..NoisePolicy::default()
            },
        }
    }
}

impl Session {
    pub fn create(config: SimConfig, spec: &SessionSpec) -> Result<Self> {
        Self::from_created(
            config,
            Event::Created {
                session_id: spec.session_id.clone(),
                start: spec.start,
                seed: spec.seed,
                equilibrium_steps: spec.equilibrium_steps,
                tally_noise: spec.tally_noise,
                feature_noise: spec.feature_noise.clone(),
            },
        )
    }

    fn from_created(config: SimConfig, created: Event) -> Result<Self> {
        let Event::Created {
            session_id,
            start,
            seed,
            equilibrium_steps,
            tally_noise,
            feature_noise,
        } = &created
        else {
            return Err(OpsError::Invalid("an event log must begin with `created`".into()));
        };
        feature_noise.validate()?;
        let sim = CoreSim::new(config)?.with_noise(*tally_noise);
        let (mut state, controls) = match start {
            StartKind::Runin => {
                let c = ControlVector::runin_start();
                (sim.fresh_state(&c, 0)?, c)
            }
            StartKind::Equilibrium => {
                let c = ControlVector::benchmark();
                (sim.equilibrium_state(&c, *equilibrium_steps, 0)?, c)
            }
        };
        state.rng_seed = *seed;
        Ok(Self {
            id: session_id.clone(),
            sim,
            state,
            controls,
            recorder: Recorder::new(feature_noise.clone()),
            history: Vec::new(),
            events: vec![created],
        })
    }

    /// Rebuilds a session from its log.
    pub fn replay(config: SimConfig, events: &[Event]) -> Result<Self> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| OpsError::Invalid("empty event log".into()))?;
        let mut s = Self::from_created(config, first.clone())?;
        for e in rest {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    /// Validates and executes one command, then logs it. Returns the
    /// records of any steps taken.
    pub fn apply(&mut self, event: Event) -> Result<Vec<StepRecord>> {
        let out = match &event {
            Event::Created { .. } => return Err(OpsError::Invalid("session already created".into())),
            Event::SetControls { controls } => {
                controls.validate()?;
                self.controls = *controls;
                Vec::new()
            }
            Event::Step { count } => {
                if *count == 0 || *count > MAX_STEPS_PER_COMMAND {
                    return Err(OpsError::Invalid(format!(
                        "step count must lie in 1..={MAX_STEPS_PER_COMMAND}, got {count}"
                    )));
                }
                let mut out = Vec::with_capacity(*count);
                for _ in 0..*count {
                    match self.one_step() {
                        Ok(rec) => out.push(rec),
                        Err(e) => {
                            // Steps already taken stay in the log so a replay
                            // ends in the same state.
                            if !out.is_empty() {
                                self.events.push(Event::Step { count: out.len() });
                            }
                            return Err(e);
                        }
                    }
                }
                out
            }
        };
        self.events.push(event);
        Ok(out)
    }

    fn one_step(&mut self) -> Result<StepRecord> {
        let r = self.sim.advance_step(&self.state, &self.controls)?;
        let rec = self.recorder.record(&self.controls, &r)?;
        self.state = r.state_after;
        self.history.push(rec.clone());
        Ok(rec)
    }

    pub fn set_controls(&mut self, controls: ControlVector) -> Result<()> {
        self.apply(Event::SetControls { controls }).map(|_| ())
    }

    pub fn step(&mut self, count: usize) -> Result<Vec<StepRecord>> {
        self.apply(Event::Step { count })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sim(&self) -> &CoreSim {
        &self.sim
    }

    pub fn state(&self) -> &CoreState {
        &self.state
    }

    /// Controls the next step will use.
    pub fn controls(&self) -> &ControlVector {
        &self.controls
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn step_index(&self) -> u64 {
        self.state.step_index
    }

    /// The recorded history as a sequence, for appending to a corpus.
    pub fn to_sequence(&self, name: &str) -> OperationSequence {
        let seed = match self.events.first() {
            Some(Event::Created { seed, .. }) => *seed,
            _ => 0,
        };
        OperationSequence {
            name: name.to_string(),
            provenance: Provenance::Runin,
            seed,
            held_out: false,
            records: self.history.clone(),
        }
    }

    /// Picks controls for the next step with `predictor` without stepping.
    pub fn choose<P: ReactivityPredictor + ?Sized>(
        &self,
        predictor: &mut P,
        schedule: &GoalSchedule,
        at: &GridPoint,
    ) -> Result<ControlChoice> {
        if self.history.len() < predictor.history_needed() {
            return Err(OpsError::Invalid(format!(
                "the controller needs {} recorded steps, the session has {}",
                predictor.history_needed(),
                self.history.len()
            )));
        }
        predictor.begin_step(&self.history, &self.state)?;
        Ok(choose_controls(predictor, schedule, at)?)
    }

    /// One controller step: choose, set controls, advance. Both mutations
    /// are logged, so a replay needs no models.
    pub fn controlled_step<P: ReactivityPredictor + ?Sized>(
        &mut self,
        predictor: &mut P,
        schedule: &GoalSchedule,
        at: &GridPoint,
    ) -> Result<(ControlChoice, StepRecord)> {
        let choice = self.choose(predictor, schedule, at)?;
        self.set_controls(choice.controls)?;
        let rec = self.step(1)?.pop().expect("one step recorded");
        Ok((choice, rec))
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_events(path, &self.events)
    }
}

/// JSON lines, one event per line.
pub fn encode_events(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e).expect("events serialize");
        out.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    out
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    artifact::write(path, EVENTS_KIND, 1, &encode_events(events))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let body = artifact::read(path, EVENTS_KIND, 1)?;
    body.split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_slice(l).map_err(|e| OpsError::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}
