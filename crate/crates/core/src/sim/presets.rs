//! Scenario presets bundled into the binary.

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

macro_rules! preset {
    ($name:literal, $desc:literal) => {
        Preset {
            name: $name,
            description: $desc,
            toml: include_str!(concat!("../../presets/", $name, ".toml")),
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("fig2a", "2x2 LEDs at 1 m spacing, 10 degree half-angle: power map"),
    preset!("fig2b", "2x2 LEDs at 1 m spacing, 25 degree half-angle: power map"),
    preset!("fig2c", "2x2 LEDs at 1 m spacing, 45 degree half-angle: power map"),
    preset!("fig4", "two users, NOMA vs OFDMA: sum rate and throughput over SNR"),
    preset!("fig5", "two users, NOMA vs OFDMA: bit error rate over SNR"),
    preset!("coverage", "coverage probability vs common target rate"),
    preset!("multicell", "frequency-reuse area map and FOV-assisted handover"),
    preset!("pairing", "hybrid scheduling with max-disparity vs random pairing"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
