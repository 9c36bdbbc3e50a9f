//! Misconfiguration scenarios as state-change label patterns.
//!
//! The label shapes are our own encoding of each scenario; no captured scan
//! data backs them. Every pattern is a full host row: listed ports carry the
//! given label, all other ports carry the pattern's base label.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hostmatch::StateChangeLabel;
use crate::scanmodel::{PortKey, PortState};

/// Ports every generated report covers.
pub fn port_universe() -> Vec<PortKey> {
    let mut ports: Vec<PortKey> = [21, 22, 23, 25, 53, 80, 110, 139, 443, 445, 3389, 8080]
        .into_iter()
        .map(PortKey::tcp)
        .chain([53, 123, 161, 500].into_iter().map(PortKey::udp))
        .collect();
    ports.sort();
    ports
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePattern {
    pub base: StateChangeLabel,
    pub labels: BTreeMap<PortKey, StateChangeLabel>,
}

impl ChangePattern {
    /// Testbed host: the switch drops traffic no rule allows, so every port
    /// not listed reads as filtered.
    fn testbed(labels: &[(PortKey, StateChangeLabel)]) -> Self {
        Self::over(label(Filtered, Filtered), labels)
    }

    fn over(base: StateChangeLabel, labels: &[(PortKey, StateChangeLabel)]) -> Self {
        ChangePattern {
            base,
            labels: labels.iter().copied().collect(),
        }
    }

    pub fn label(&self, port: &PortKey) -> StateChangeLabel {
        self.labels.get(port).copied().unwrap_or(self.base)
    }

    /// Labels aligned with `ports`.
    pub fn row(&self, ports: &[PortKey]) -> Vec<StateChangeLabel> {
        ports.iter().map(|p| self.label(p)).collect()
    }

    pub fn has_change(&self) -> bool {
        self.base.is_change() || self.labels.values().any(|l| l.is_change())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    RedundantRuleNTP123,
    RedundantRuleSMB445,
    RedundantRuleHTTP8080,
    MissingFirewall,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub name: ScenarioName,
    /// Port the misconfigured rule or firewall is about.
    pub port: PortKey,
    pub description: String,
    pub valid_changes: Vec<ChangePattern>,
    pub vulnerable_changes: Vec<ChangePattern>,
}

const fn label(from: PortState, to: PortState) -> StateChangeLabel {
    StateChangeLabel { from, to }
}

use PortState::{Closed, Filtered, Open};

/// Testbed host running `services` (unchanged, open) plus `changes`.
fn testbed_host(services: &[PortKey], changes: &[(PortKey, StateChangeLabel)]) -> ChangePattern {
    let running: Vec<(PortKey, StateChangeLabel)> = services.iter().map(|p| (*p, label(Open, Open))).collect();
    ChangePattern::testbed(&[running.as_slice(), changes].concat())
}

/// A stale high-priority rule keeps forwarding `port` to the old subnet.
/// Vulnerable: a host in the wrong subnet (`stray`) starts answering on the
/// port, and the relocated server stops answering. Valid: the relocated
/// server becomes reachable through the updated rule. Server and stray host
/// are different machines, so each runs its own services.
fn redundant_rule(
    name: ScenarioName,
    port: PortKey,
    service: &str,
    server: &[PortKey],
    stray: &[PortKey],
) -> ScenarioTemplate {
    let mut valid = vec![testbed_host(server, &[(port, label(Filtered, Open))])];
    if name == ScenarioName::RedundantRuleSMB445 {
        // old-subnet host once the rule is updated to drop the forwarded traffic
        valid.push(testbed_host(stray, &[(port, label(Closed, Filtered))]));
    }
    ScenarioTemplate {
        name,
        port,
        description: format!("{service} server moved to a new switch while a rule still forwards {port} to the old subnet"),
        valid_changes: valid,
        vulnerable_changes: vec![
            testbed_host(stray, &[(port, label(Closed, Open))]),
            testbed_host(server, &[(port, label(Open, Filtered))]),
        ],
    }
}

/// A subnet is attached without the stateful firewall that should expose only
/// its web server. Vulnerable: every service of a subnet host becomes
/// reachable while the web server port stays filtered on it. Valid: only the
/// web server's ports open up.
fn missing_firewall() -> ScenarioTemplate {
    let web = PortKey::tcp(8080);
    let ff = label(Filtered, Filtered);
    let fo = label(Filtered, Open);
    let exposed: Vec<(PortKey, StateChangeLabel)> = [22, 139, 445, 3389]
        .into_iter()
        .map(|p| (PortKey::tcp(p), fo))
        .chain([(web, ff)])
        .collect();
    ScenarioTemplate {
        name: ScenarioName::MissingFirewall,
        port: web,
        description: "subnet attached without the firewall that should expose only the web server".into(),
        valid_changes: vec![
            ChangePattern::testbed(&[(web, fo)]),
            ChangePattern::testbed(&[(web, fo), (PortKey::tcp(443), fo)]),
        ],
        vulnerable_changes: vec![ChangePattern::testbed(&exposed)],
    }
}

pub fn scenario_templates() -> Vec<ScenarioTemplate> {
    let (t, u) = (PortKey::tcp, PortKey::udp);
    vec![
        redundant_rule(
            ScenarioName::RedundantRuleNTP123,
            u(123),
            "NTP",
            &[t(22), u(53), u(161)],
            &[t(22), t(25), t(110)],
        ),
        redundant_rule(
            ScenarioName::RedundantRuleSMB445,
            t(445),
            "SMB",
            &[t(22), t(139), t(3389)],
            &[t(21), t(23), t(80)],
        ),
        redundant_rule(
            ScenarioName::RedundantRuleHTTP8080,
            t(8080),
            "HTTP",
            &[t(22), t(80), t(443)],
            &[t(53), u(53), u(500)],
        ),
        missing_firewall(),
    ]
}

/// Unchanged rows seen in the scenarios' correct reconfigurations.
pub fn no_change_profiles() -> Vec<ChangePattern> {
    let oo = label(Open, Open);
    let t = PortKey::tcp;
    vec![
        ChangePattern::testbed(&[(t(22), oo)]),
        ChangePattern::testbed(&[(t(22), oo), (t(139), oo), (t(445), oo)]),
        ChangePattern::testbed(&[(t(22), oo), (t(80), oo), (t(443), oo)]),
        ChangePattern::testbed(&[(t(22), oo), (PortKey::udp(123), oo)]),
        ChangePattern::testbed(&[]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_ports() {
        let t = scenario_templates();
        assert_eq!(t[0].port, PortKey::udp(123));
        assert_eq!(t[1].port, PortKey::tcp(445));
        assert_eq!(t[2].port, PortKey::tcp(8080));
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn six_valid_seven_vulnerable() {
        let t = scenario_templates();
        assert_eq!(t.iter().map(|s| s.valid_changes.len()).sum::<usize>(), 6);
        assert_eq!(t.iter().map(|s| s.vulnerable_changes.len()).sum::<usize>(), 7);
    }

    #[test]
    fn valid_and_vulnerable_rows_never_coincide() {
        let ports = port_universe();
        let all = scenario_templates();
        let valid: Vec<_> = all.iter().flat_map(|s| &s.valid_changes).map(|p| p.row(&ports)).collect();
        for s in &all {
            for v in &s.vulnerable_changes {
                assert!(v.has_change());
                assert!(!valid.contains(&v.row(&ports)), "{}", s.name);
            }
            assert!(s.valid_changes.iter().all(ChangePattern::has_change));
        }
    }

    #[test]
    fn no_change_profiles_are_unchanged() {
        assert!(no_change_profiles().iter().all(|p| !p.has_change()));
    }

    #[test]
    fn universe_is_sorted_and_sixteen_wide() {
        let u = port_universe();
        assert_eq!(u.len(), 16);
        assert!(u.windows(2).all(|w| w[0] < w[1]));
    }
}
