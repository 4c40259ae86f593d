use clap::ValueEnum;
use kiqt_core::model::UNetConfig;
use kiqt_core::tensorio::{ExperimentConfig, IqtDomain};

/// Scale of a run: network width and the default experiment settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Narrow network, 30 epochs, batch 1; minutes on one CPU core.
    Desk,
    /// Full-width network with the reference training protocol.
    Full,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }

    pub fn unet(self, domain: IqtDomain) -> UNetConfig {
        match self {
            Profile::Desk => UNetConfig::with_widths(domain, [12, 24, 48], 96),
            Profile::Full => UNetConfig::full(domain),
        }
    }

    pub fn default_config(self) -> ExperimentConfig {
        match self {
            Profile::Desk => ExperimentConfig {
                epochs: 30,
                batch_size: 1,
                learning_rate: 3e-3,
                ..ExperimentConfig::default()
            },
            Profile::Full => ExperimentConfig::default(),
        }
    }

    /// Phantom edge length used when simulating without volumes.
    pub fn phantom_size(self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Full => 256,
        }
    }
}
