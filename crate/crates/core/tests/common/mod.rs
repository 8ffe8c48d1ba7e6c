#![allow(dead_code)]

use rfpuf::channel::apply_channel;
use rfpuf::devicegen::{ChannelRealization, TxProfile};
use rfpuf::txchain::{generate_prbs, transmit, FrameConfig, IqFrame};

pub fn tx(lo_ppm: f64, gain_db: f64, phase_deg: f64, backoff_db: f64) -> TxProfile {
    TxProfile {
        device_id: 0,
        lo_offset_ppm: lo_ppm,
        iq_gain_imbalance_db: gain_db,
        iq_phase_imbalance_deg: phase_deg,
        pa_backoff_db: backoff_db,
    }
}

/// A frame from `tx` through an AWGN channel at `eb_n0_db` (no Doppler, unit gain).
pub fn noisy_frame(tx: &TxProfile, bits: usize, eb_n0_db: f64, seed: u64) -> IqFrame {
    let stream = generate_prbs(bits, seed).unwrap();
    let frame = transmit(&stream, tx, &FrameConfig::default()).unwrap();
    let ch = ChannelRealization {
        eb_n0_db,
        doppler_hz: 0.0,
        gain_db: 0.0,
    };
    apply_channel(frame, &ch, seed ^ 0x5eed).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
