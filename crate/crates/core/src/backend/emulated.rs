//! Emulated hardware: native-unit conversion, deadband, quantization,
//! latency, device-rate gating, and seeded sensor noise on top of the
//! kinematic model.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::record::{bind, DefRecord, MappingRule, Schema};
use crate::robot::RobotDefinition;

use super::profile::DeviceProfile;
use super::{conform, tick_index, Backend, BackendError};

#[derive(Debug)]
struct Live {
    def: RobotDefinition,
    native_schema: Schema,
    native_rules: Vec<MappingRule>,
    sense_schema: Schema,
    state: DefRecord,
    encoders: DefRecord,
    t_last: f64,
    /// `(effective time, native command)`
    queue: VecDeque<(f64, Vec<f64>)>,
    held: Vec<f64>,
    held_input: DefRecord,
    reading: Option<(i64, DefRecord)>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    changes: u64,
}

#[derive(Debug)]
pub struct EmulatedBackend {
    profile: DeviceProfile,
    name: String,
    live: Option<Live>,
}

impl EmulatedBackend {
    pub fn new(profile: DeviceProfile) -> Self {
        EmulatedBackend {
            name: format!("emulated:{}", profile.name),
            profile,
            live: None,
        }
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    /// Native command the device is currently executing.
    pub fn effective_command(&self) -> Result<DefRecord, BackendError> {
        let live = self.live.as_ref().ok_or(BackendError::NotInitialized)?;
        Ok(DefRecord::from_values(
            &live.native_schema,
            live.held.clone(),
        )?)
    }

    /// How many times the executing command has changed value.
    pub fn effective_changes(&self) -> u64 {
        self.live.as_ref().map_or(0, |l| l.changes)
    }

    fn live(&mut self) -> Result<&mut Live, BackendError> {
        self.live.as_mut().ok_or(BackendError::NotInitialized)
    }

    /// Definition input in rad/s to conditioned native actuator values.
    pub fn to_native(
        &self,
        def: &RobotDefinition,
        input: &DefRecord,
    ) -> Result<Vec<f64>, BackendError> {
        let actuators = def.expand_links(input)?;
        let native_schema = self.profile.native_schema(def)?;
        let rules = self.profile.native_rules(def)?;
        let native = bind(&DefRecord::new(&native_schema), &actuators, &rules)?;
        Ok(native
            .values()
            .iter()
            .map(|v| self.profile.condition(*v))
            .collect())
    }
}

impl Backend for EmulatedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        if !def.is_wheeled() {
            return Err(BackendError::SchemaIncompatible(format!(
                "{} drives wheeled bases only; `{}` has {:?}",
                self.name,
                def.name(),
                def.kinds()
            )));
        }
        Ok(())
    }

    fn init(&mut self, def: &RobotDefinition, t0: f64, seed: u64) -> Result<(), BackendError> {
        self.supports(def)?;
        self.profile.validate()?;
        let native_schema = self.profile.native_schema(def)?;
        let range_unit = self.profile.range_unit.clone();
        let sense_schema =
            def.output_schema()
                .map_specs(format!("{}.native_output", def.name()), |leaf| {
                    if leaf.path.starts_with("range.") {
                        leaf.spec.in_unit(&range_unit)
                    } else {
                        Ok(leaf.spec.clone())
                    }
                })?;
        let noise = if self.profile.noise_std > 0.0 {
            Some(
                Normal::new(0.0, self.profile.noise_std)
                    .map_err(|e| BackendError::InvalidProfile(e.to_string()))?,
            )
        } else {
            None
        };
        self.live = Some(Live {
            held: vec![0.0; native_schema.len()],
            held_input: DefRecord::new(def.input_schema()),
            native_rules: self.profile.native_rules(def)?,
            native_schema,
            sense_schema,
            state: def.initial_state()?,
            encoders: DefRecord::new(&def.encoder_schema()?),
            def: def.clone(),
            t_last: t0,
            queue: VecDeque::new(),
            reading: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            changes: 0,
        });
        Ok(())
    }

    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        let profile = self.profile.clone();
        let live = self.live()?;
        let input = conform(input, live.def.input_schema())?;
        if t < live.t_last {
            return Err(BackendError::TimeReversal {
                t,
                last: live.t_last,
            });
        }
        let actuators = live.def.expand_links(&input)?;
        let native = bind(
            &DefRecord::new(&live.native_schema),
            &actuators,
            &live.native_rules,
        )?;
        let cmd: Vec<f64> = native
            .values()
            .iter()
            .map(|v| profile.condition(*v))
            .collect();
        live.queue.push_back((t + profile.command_latency, cmd));

        // At most one device update per call; the latched command covers the
        // whole interval ending at `t`.
        if tick_index(t, profile.device_rate) > tick_index(live.t_last, profile.device_rate) {
            let mut newest = None;
            while live.queue.front().is_some_and(|(eff, _)| *eff <= t + 1e-9) {
                newest = live.queue.pop_front().map(|(_, c)| c);
            }
            if let Some(c) = newest {
                if c != live.held {
                    live.changes += 1;
                }
                live.held = c;
                let mut held_input = DefRecord::new(live.def.input_schema());
                for (i, key) in live.native_schema.keys().enumerate() {
                    if let Some(idx) = held_input.schema().index_of(key) {
                        let w = profile.to_rad_per_sec(&live.def, key, live.held[i])?;
                        held_input.put_index(idx, w)?;
                    }
                }
                live.held_input = held_input;
            }
        }

        let dt = t - live.t_last;
        if dt > 0.0 {
            live.state = live.def.advance(&live.state, &live.held_input, dt)?;
            live.encoders = live
                .def
                .advance_encoders(&live.encoders, &live.held_input, dt)?;
        }
        live.t_last = t;
        Ok(())
    }

    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        let rate = self.profile.device_rate;
        let live = self.live()?;
        let tick = tick_index(live.t_last, rate);
        if let Some((at, r)) = &live.reading {
            if *at == tick {
                return Ok(r.clone());
            }
        }
        let model = live.def.sense_map(&live.state, &live.encoders)?;
        let mut reading = model.project(&live.sense_schema)?;
        if let Some(noise) = live.noise {
            for (i, leaf) in live.sense_schema.clone().leaves().iter().enumerate() {
                if leaf.path.starts_with("range.") {
                    let v = reading.values()[i] + noise.sample(&mut live.rng);
                    reading.put_index(i, leaf.spec.clamp(v))?;
                }
            }
        }
        let reading = reading.with_timestamp(live.t_last);
        live.reading = Some((tick, reading.clone()));
        Ok(reading)
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
        Some(self.profile.device_timestep())
    }
}
