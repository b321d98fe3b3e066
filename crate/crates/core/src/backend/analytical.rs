//! Exact kinematic model: the definition's maps integrated in closed form.

use crate::record::DefRecord;
use crate::robot::RobotDefinition;

use super::{conform, Backend, BackendError};

#[derive(Debug)]
struct Live {
    def: RobotDefinition,
    state: DefRecord,
    encoders: DefRecord,
    t_last: f64,
}

#[derive(Debug, Default)]
pub struct AnalyticalBackend {
    live: Option<Live>,
}

impl AnalyticalBackend {
    pub fn new() -> Self {
        AnalyticalBackend::default()
    }

    fn live(&mut self) -> Result<&mut Live, BackendError> {
        self.live.as_mut().ok_or(BackendError::NotInitialized)
    }
}

impl Backend for AnalyticalBackend {
    fn name(&self) -> &str {
        "analytical"
    }

    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        if def.parts().is_empty() {
            return Err(BackendError::SchemaIncompatible(
                "definition has no parts".into(),
            ));
        }
        Ok(())
    }

    fn init(&mut self, def: &RobotDefinition, t0: f64, _seed: u64) -> Result<(), BackendError> {
        self.supports(def)?;
        self.live = Some(Live {
            state: def.initial_state()?,
            encoders: DefRecord::new(&def.encoder_schema()?),
            def: def.clone(),
            t_last: t0,
        });
        Ok(())
    }

    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        let live = self.live()?;
        let input = conform(input, live.def.input_schema())?;
        let dt = t - live.t_last;
        if dt < 0.0 {
            return Err(BackendError::TimeReversal {
                t,
                last: live.t_last,
            });
        }
        if dt > 0.0 {
            live.state = live.def.advance(&live.state, &input, dt)?;
            live.encoders = live.def.advance_encoders(&live.encoders, &input, dt)?;
        }
        live.t_last = t;
        Ok(())
    }

    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        let live = self.live()?;
        Ok(live
            .def
            .sense_map(&live.state, &live.encoders)?
            .with_timestamp(live.t_last))
    }

    fn observe_state(&mut self) -> Result<DefRecord, BackendError> {
        let live = self.live()?;
        Ok(live.state.clone().with_timestamp(live.t_last))
    }

    fn close(&mut self) -> Result<(), BackendError> {
        self.live = None;
        Ok(())
    }

    fn device_timestep(&self) -> Option<f64> {
        None
    }
}
