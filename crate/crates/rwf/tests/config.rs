use rwf::config::RunConfig;
use rwf::rwf_core::network::ModelConfig;
use rwf::rwf_core::objective::SpectrumDistance;
use rwf::RwfError;

fn config_err(text: &str) -> String {
    match RunConfig::parse(text) {
        Err(RwfError::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_text_gives_defaults() {
    let cfg = RunConfig::parse("# nothing\n\n").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.model, ModelConfig::desk());
}

#[test]
fn preset_then_overrides() {
    let cfg = RunConfig::parse("steps = 20\npreset = RWF-T\nlambda = 0 # off\nspectrum = modulus\n").unwrap();
    assert_eq!(cfg.model, ModelConfig::by_name("RWF-T").unwrap());
    assert_eq!(cfg.train.steps, 20);
    assert_eq!(cfg.train.weights.lambda, 0.0);
    assert_eq!(cfg.train.weights.spectrum, SpectrumDistance::Modulus);
}

#[test]
fn changed_model_is_renamed_custom() {
    let cfg = RunConfig::parse("preset = RWF-desk\nchannels = 16\n").unwrap();
    assert_eq!(cfg.model.name, "custom");
    assert_eq!(cfg.model.channels, 16);
}

#[test]
fn unknown_duplicate_and_malformed_lines() {
    assert!(config_err("steps = 1\nlearning_rate = 3\n").contains("line 2"));
    assert!(config_err("steps = 1\nsteps = 2\n").contains("duplicate"));
    assert!(config_err("steps\n").contains("line 1"));
    assert!(config_err("depths = 1,2\n").contains("depths"));
    assert!(config_err("preset = RWF-XL\n").contains("preset"));
    assert!(config_err("msr = maybe\n").contains("msr"));
    assert!(config_err("checkpoint_every = 0\n").contains("checkpoint_every"));
}

#[test]
fn render_parses_back_to_the_same_config() {
    for text in ["", "preset = RWF-S\nseed = 9\nalpha = 0.25\n", "channels = 12\nqkv = split\nmsr = false\n"] {
        let cfg = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, again, "{text:?}");
    }
}
