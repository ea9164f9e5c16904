use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::polarization::{precession_period_ns, Basis, CascadeStateParams};

pub const CHANNEL_COUNT: usize = 4;

/// Detection channels 0 and 1 sit behind the XX arm's polarizing splitter,
/// channels 2 and 3 behind the X arm's.
pub const XX_CHANNELS: [u8; 2] = [0, 1];
pub const X_CHANNELS: [u8; 2] = [2, 3];

/// Full-width-half-maximum to standard deviation for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub eta_det: f64,
    pub jitter_fwhm_ps: f64,
    pub dark_hz: f64,
    pub basis: Basis,
    pub fidelity: f64,
}

/// Cyclic basis schedule: segment `i` covers pulses
/// `[i·segment_pulses, (i+1)·segment_pulses)` and uses `settings[i % len]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSchedule {
    pub segment_pulses: u64,
    pub settings: Vec<[Basis; CHANNEL_COUNT]>,
}

impl BasisSchedule {
    /// Nine settings covering every pair of measurement axes, each arm
    /// observing a basis and its orthogonal partner.
    pub fn tomography(segment_pulses: u64) -> Self {
        let firsts = [Basis::H, Basis::D, Basis::R];
        let mut settings = Vec::with_capacity(9);
        for &a in &firsts {
            for &b in &firsts {
                settings.push([a, a.orthogonal(), b, b.orthogonal()]);
            }
        }
        BasisSchedule { segment_pulses, settings }
    }

    pub fn setting_for_pulse(&self, pulse: u64) -> &[Basis; CHANNEL_COUNT] {
        let seg = pulse / self.segment_pulses;
        &self.settings[(seg % self.settings.len() as u64) as usize]
    }

    /// Segments `(first_pulse, end_pulse, setting)` of a run of `n_pulses`.
    pub fn segments(&self, n_pulses: u64) -> Vec<(u64, u64, [Basis; CHANNEL_COUNT])> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < n_pulses {
            let end = (start + self.segment_pulses).min(n_pulses);
            out.push((start, end, *self.setting_for_pulse(start)));
            start = end;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_pulses == 0 {
            return invalid("schedule segment_pulses must be positive");
        }
        if self.settings.is_empty() {
            return invalid("schedule needs at least one setting");
        }
        for s in &self.settings {
            validate_arm_pairing(s)?;
        }
        Ok(())
    }
}

fn validate_arm_pairing(bases: &[Basis; CHANNEL_COUNT]) -> Result<()> {
    if bases[1] != bases[0].orthogonal() || bases[3] != bases[2].orthogonal() {
        return invalid(format!(
            "channels behind one splitter must carry orthogonal bases, got {:?}",
            bases
        ));
    }
    Ok(())
}

mod infinite_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Physical parameters of the source and detection setup.
///
/// Dephasing times serialize as `null` when infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeParams {
    pub rep_rate_ghz: f64,
    pub t1_xx_ps: f64,
    pub t1_x_ps: f64,
    #[serde(rename = "fss_ueV")]
    pub fss_uev: f64,
    pub dphi_deg: f64,
    #[serde(with = "infinite_as_null", default = "infinite")]
    pub t2star_xx_ps: f64,
    #[serde(with = "infinite_as_null", default = "infinite")]
    pub t2star_x_ps: f64,
    pub eta_ex: f64,
    pub beta: f64,
    pub t_decay_ns: f64,
    pub channels: Vec<ChannelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<BasisSchedule>,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl CascadeParams {
    /// Source and setup values of the reference device, with detector dark
    /// rates chosen to give a 99.7 % single-photon purity at these rates.
    pub fn reference() -> Self {
        let jitters = [47.0, 56.0, 54.0, 50.0];
        let bases = [Basis::H, Basis::V, Basis::H, Basis::V];
        CascadeParams {
            rep_rate_ghz: 0.9925,
            t1_xx_ps: 134.96,
            t1_x_ps: 200.4,
            fss_uev: 3.9,
            dphi_deg: 20.0,
            t2star_xx_ps: 392.0,
            t2star_x_ps: f64::INFINITY,
            eta_ex: 0.076,
            beta: 1.0,
            t_decay_ns: 12.7,
            channels: (0..CHANNEL_COUNT)
                .map(|c| ChannelParams {
                    eta_det: 0.011,
                    jitter_fwhm_ps: jitters[c],
                    dark_hz: 620.0,
                    basis: bases[c],
                    fidelity: 1.0,
                })
                .collect(),
            schedule: None,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn period_ps(&self) -> f64 {
        1e3 / self.rep_rate_ghz
    }

    pub fn precession_period_ns(&self) -> f64 {
        precession_period_ns(self.fss_uev)
    }

    pub fn state_params(&self) -> CascadeStateParams {
        CascadeStateParams {
            precession_period_ns: self.precession_period_ns(),
            phase_offset: self.dphi_deg.to_radians(),
            t2star_x_ps: self.t2star_x_ps,
            t1_x_ps: self.t1_x_ps,
        }
    }

    pub fn static_setting(&self) -> [Basis; CHANNEL_COUNT] {
        let mut s = [Basis::H; CHANNEL_COUNT];
        for (i, c) in self.channels.iter().enumerate().take(CHANNEL_COUNT) {
            s[i] = c.basis;
        }
        s
    }

    pub fn setting_for_pulse(&self, pulse: u64) -> [Basis; CHANNEL_COUNT] {
        match &self.schedule {
            Some(s) => *s.setting_for_pulse(pulse),
            None => self.static_setting(),
        }
    }

    /// Effective schedule (a single static segment when none is configured).
    pub fn effective_schedule(&self) -> BasisSchedule {
        self.schedule.clone().unwrap_or_else(|| BasisSchedule {
            segment_pulses: u64::MAX,
            settings: vec![self.static_setting()],
        })
    }

    /// Combined Gaussian jitter FWHM of an XX–X channel pair.
    pub fn combined_jitter_fwhm(&self, ch_a: u8, ch_b: u8) -> f64 {
        let a = self.channels[ch_a as usize].jitter_fwhm_ps;
        let b = self.channels[ch_b as usize].jitter_fwhm_ps;
        (a * a + b * b).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rep_rate_ghz", self.rep_rate_ghz),
            ("t1_xx_ps", self.t1_xx_ps),
            ("t1_x_ps", self.t1_x_ps),
            ("fss_ueV", self.fss_uev),
            ("t2star_xx_ps", self.t2star_xx_ps),
            ("t2star_x_ps", self.t2star_x_ps),
            ("t_decay_ns", self.t_decay_ns),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.dphi_deg.is_finite() {
            return invalid("dphi_deg must be finite");
        }
        if !(0.0..=1.0).contains(&self.eta_ex) {
            return invalid("eta_ex must lie in [0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return invalid("beta must lie in (0, 1]");
        }
        if self.channels.len() != CHANNEL_COUNT {
            return invalid(format!("expected {CHANNEL_COUNT} channels, got {}", self.channels.len()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.eta_det) {
                return invalid(format!("channel {i}: eta_det must lie in [0, 1]"));
            }
            if !(c.jitter_fwhm_ps >= 0.0 && c.jitter_fwhm_ps.is_finite()) {
                return invalid(format!("channel {i}: jitter must be non-negative"));
            }
            if !(c.dark_hz >= 0.0 && c.dark_hz.is_finite()) {
                return invalid(format!("channel {i}: dark rate must be non-negative"));
            }
            if !(0.5..=1.0).contains(&c.fidelity) {
                return invalid(format!("channel {i}: fidelity must lie in [0.5, 1]"));
            }
        }
        match &self.schedule {
            Some(s) => s.validate(),
            None => validate_arm_pairing(&self.static_setting()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_match_the_config_schema() {
        let json = serde_json::to_value(CascadeParams::reference()).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        let mut expected = vec![
            "rep_rate_ghz", "t1_xx_ps", "t1_x_ps", "fss_ueV", "dphi_deg", "t2star_xx_ps",
            "t2star_x_ps", "eta_ex", "beta", "t_decay_ns", "channels",
        ];
        expected.sort();
        assert_eq!(keys, expected);
        let ch: Vec<_> = json["channels"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(ch.len(), 5);
        for k in ["eta_det", "jitter_fwhm_ps", "dark_hz", "basis", "fidelity"] {
            assert!(ch.contains(&k.to_string()));
        }
        assert!(json["t2star_x_ps"].is_null());
    }

    #[test]
    fn json_round_trip_and_null_infinity() {
        let p = CascadeParams::reference();
        let text = serde_json::to_string(&p).unwrap();
        let back = CascadeParams::from_json(&text).unwrap();
        assert_eq!(back, p);
        assert!(back.t2star_x_ps.is_infinite());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(CascadeParams::reference()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(CascadeParams::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut p = CascadeParams::reference();
        p.eta_ex = 1.5;
        assert!(p.validate().is_err());
        let mut p = CascadeParams::reference();
        p.channels[1].basis = Basis::D;
        assert!(p.validate().is_err());
        let mut p = CascadeParams::reference();
        p.channels.pop();
        assert!(p.validate().is_err());
        assert!(CascadeParams::reference().validate().is_ok());
    }

    #[test]
    fn tomography_schedule_covers_all_pairs() {
        let s = BasisSchedule::tomography(10);
        s.validate().unwrap();
        let mut pairs = std::collections::HashSet::new();
        for set in &s.settings {
            for a in [set[0], set[1]] {
                for b in [set[2], set[3]] {
                    pairs.insert((a, b));
                }
            }
        }
        assert_eq!(pairs.len(), 36);
        assert_eq!(s.segments(95).len(), 10);
        assert_eq!(s.segments(95).last().unwrap().1, 95);
    }
}
