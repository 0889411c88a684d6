//! Machine description recorded next to measurements.

use std::collections::BTreeMap;
use std::fs;
use std::time::{SystemTime, UNIX_EPOCH};

fn read_trimmed(path: &str) -> Option<String> {
    fs::read_to_string(path).ok().map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn cpu_model() -> Option<String> {
    let info = fs::read_to_string("/proc/cpuinfo").ok()?;
    info.lines()
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| matches!(k.trim(), "model name" | "Hardware" | "Processor" | "cpu model"))
        .map(|(_, v)| v.trim().to_string())
}

pub fn metadata() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("os".into(), std::env::consts::OS.into());
    m.insert("arch".into(), std::env::consts::ARCH.into());
    let hostname = read_trimmed("/proc/sys/kernel/hostname")
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok());
    if let Some(h) = hostname {
        m.insert("hostname".into(), h);
    }
    if let Some(k) = read_trimmed("/proc/sys/kernel/osrelease") {
        m.insert("kernel".into(), k);
    }
    if let Some(c) = cpu_model() {
        m.insert("cpu_model".into(), c);
    }
    if let Ok(n) = std::thread::available_parallelism() {
        m.insert("logical_cpus".into(), n.to_string());
    }
    if let Ok(t) = SystemTime::now().duration_since(UNIX_EPOCH) {
        m.insert("measured_at_unix".into(), t.as_secs().to_string());
    }
    m.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    m
}
