use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SensorStreams, SimError};
use crate::inekf::{ImuBias, NoiseConfig};
use crate::shape::CableMeasurements;

/// Noise injected into the clean streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNoise {
    /// White noise per sample and bias random-walk densities.
    pub imu: NoiseConfig,
    /// Standard deviation of each cable length [m].
    pub cable_std: f64,
    /// Probability of flipping each contact flag per sample.
    pub contact_chatter: f64,
    /// Bias at the first sample.
    pub initial_bias: ImuBias,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            imu: NoiseConfig::default(),
            cable_std: 0.01,
            contact_chatter: 0.0,
            initial_bias: ImuBias::default(),
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        SensorNoise {
            imu: NoiseConfig {
                gyro: Matrix3::zeros(),
                accel: Matrix3::zeros(),
                gyro_bias: Matrix3::zeros(),
                accel_bias: Matrix3::zeros(),
                ..Default::default()
            },
            cable_std: 0.0,
            contact_chatter: 0.0,
            initial_bias: ImuBias::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.imu
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if !(self.cable_std >= 0.0) || !(0.0..=1.0).contains(&self.contact_chatter) {
            return Err(SimError::InvalidConfig(
                "cable_std must be >= 0 and contact_chatter in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Square root of a symmetric PSD matrix, `None` when it is zero.
fn sqrt_psd(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if m.iter().all(|x| *x == 0.0) {
        return None;
    }
    let e = m.symmetric_eigen();
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(e.eigenvectors * Matrix3::from_diagonal(&s) * e.eigenvectors.transpose())
}

fn gaussian(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn add_noise(x: &mut Vector3<f64>, l: &Option<Matrix3<f64>>, scale: f64, rng: &mut ChaCha8Rng) {
    if let Some(l) = l {
        *x += l * gaussian(rng) * scale;
    }
}

/// Adds IMU white noise and random-walk biases, cable noise and contact
/// chatter. Zero noise returns the input unchanged bit for bit.
pub fn corrupt(streams: &SensorStreams, noise: &SensorNoise, seed: u64) -> SensorStreams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = streams.clone();
    let (lg, la) = (sqrt_psd(&noise.imu.gyro), sqrt_psd(&noise.imu.accel));
    let (lbg, lba) = (sqrt_psd(&noise.imu.gyro_bias), sqrt_psd(&noise.imu.accel_bias));
    let mut bias = noise.initial_bias;
    let has_bias = bias != ImuBias::default();
    let mut last_t = streams.imu.first().map_or(0.0, |s| s.timestamp);
    for s in &mut out.imu {
        let dt = (s.timestamp - last_t).max(0.0);
        last_t = s.timestamp;
        add_noise(&mut bias.gyro, &lbg, dt.sqrt(), &mut rng);
        add_noise(&mut bias.accel, &lba, dt.sqrt(), &mut rng);
        if has_bias || lbg.is_some() || lba.is_some() {
            s.gyro += bias.gyro;
            s.accel += bias.accel;
        }
        add_noise(&mut s.gyro, &lg, 1.0, &mut rng);
        add_noise(&mut s.accel, &la, 1.0, &mut rng);
    }
    if noise.cable_std > 0.0 {
        out.cables = streams
            .cables
            .iter()
            .map(|c| {
                let l = c
                    .lengths()
                    .map(|x| x + noise.cable_std * rng.sample::<f64, _>(StandardNormal));
                CableMeasurements::from_raw(c.timestamp, l)
            })
            .collect();
    }
    if noise.contact_chatter > 0.0 {
        for c in &mut out.contacts {
            for flag in &mut c.c {
                if rng.random_bool(noise.contact_chatter) {
                    *flag = !*flag;
                }
            }
        }
    }
    out
}
