use std::collections::{BTreeSet, HashSet};
use std::net::Ipv4Addr;

use log::warn;
use roxmltree::{Document, Node};

use super::{canonical_port_state, HostScan, MacAddr, PortKey, PortState, ScanDataset, StateMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// State for ports a host does not list when no `extraports` summary exists.
    pub default_state: PortState,
    pub mode: StateMode,
    pub label: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            default_state: PortState::Closed,
            mode: StateMode::Strict,
            label: String::new(),
        }
    }
}

/// Parses scanner XML output in strict mode.
pub fn ingest_scan(xml: &str, default_state: PortState) -> Result<ScanDataset> {
    ingest_scan_with(
        xml,
        &IngestOptions {
            default_state,
            ..IngestOptions::default()
        },
    )
}

pub fn ingest_scan_with(xml: &str, opts: &IngestOptions) -> Result<ScanDataset> {
    let doc = Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::Xml {
            offset: byte_offset(xml, pos.row, pos.col),
            message: e.to_string(),
        }
    })?;

    let mut hosts: Vec<(HostScan, PortState)> = Vec::new();
    let mut seen = HashSet::new();
    for host in doc.descendants().filter(|n| n.has_tag_name("host")) {
        if let Some(status) = child(host, "status") {
            let state = status.attribute("state").unwrap_or("up");
            if state != "up" {
                warn!("skipping host reported `{state}`");
                continue;
            }
        }
        let Some(parsed) = parse_host(host, opts)? else {
            continue;
        };
        if !seen.insert(parsed.0.ip) {
            return Err(Error::data(format!(
                "duplicate IPv4 address {} for distinct hosts",
                parsed.0.ip
            )));
        }
        hosts.push(parsed);
    }

    let universe: BTreeSet<PortKey> = hosts
        .iter()
        .flat_map(|(h, _)| h.ports.keys().copied())
        .collect();
    let entries = hosts
        .into_iter()
        .map(|(mut h, fallback)| {
            for p in &universe {
                h.ports.entry(*p).or_insert(fallback);
            }
            h
        })
        .collect();
    ScanDataset::new(opts.label.clone(), entries)
}

fn parse_host(host: Node, opts: &IngestOptions) -> Result<Option<(HostScan, PortState)>> {
    let mut ip = None;
    let mut mac = None;
    for addr in host.children().filter(|n| n.has_tag_name("address")) {
        let value = addr.attribute("addr").unwrap_or_default();
        match addr.attribute("addrtype") {
            Some("ipv4") => {
                let parsed: Ipv4Addr = value
                    .parse()
                    .map_err(|_| Error::data(format!("invalid IPv4 address `{value}`")))?;
                ip = Some(parsed);
            }
            Some("mac") => mac = Some(value.parse::<MacAddr>()?),
            _ => {}
        }
    }
    let Some(ip) = ip else {
        warn!("skipping host without an IPv4 address");
        return Ok(None);
    };

    let mut scan = HostScan::new(ip, mac);
    let mut fallback: Option<(u64, PortState)> = None;
    if let Some(ports) = child(host, "ports") {
        for node in ports.children().filter(Node::is_element) {
            match node.tag_name().name() {
                "port" => {
                    let proto = node.attribute("protocol").unwrap_or_default();
                    let Ok(protocol) = proto.parse() else {
                        warn!("{ip}: ignoring port with protocol `{proto}`");
                        continue;
                    };
                    let id = node.attribute("portid").unwrap_or_default();
                    let number: u16 = id
                        .parse()
                        .ok()
                        .filter(|n| *n != 0)
                        .ok_or_else(|| Error::data(format!("{ip}: invalid portid `{id}`")))?;
                    let raw = child(node, "state")
                        .and_then(|s| s.attribute("state"))
                        .ok_or_else(|| Error::data(format!("{ip}: port {id} has no state")))?;
                    let key = PortKey::new(protocol, number)?;
                    if scan.ports.insert(key, canonical_port_state(raw, opts.mode)?).is_some() {
                        return Err(Error::data(format!("{ip}: port {key} listed twice")));
                    }
                }
                "extraports" => {
                    let raw = node.attribute("state").unwrap_or_default();
                    let state = canonical_port_state(raw, opts.mode)?;
                    let count = node
                        .attribute("count")
                        .and_then(|c| c.parse().ok())
                        .unwrap_or(0u64);
                    // several summaries: the largest one describes the unlisted ports
                    if fallback.is_none_or(|(c, _)| count > c) {
                        fallback = Some((count, state));
                    }
                }
                _ => {}
            }
        }
    }
    let fallback = fallback.map_or(opts.default_state, |(_, s)| s);
    Ok(Some((scan, fallback)))
}

/// Scanner-style XML listing every port of every host explicitly.
pub fn write_scan_xml(ds: &ScanDataset) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>\n<nmaprun scanner=\"portdrift\">\n");
    for h in ds.entries() {
        out.push_str("  <host><status state=\"up\"/>\n");
        out.push_str(&format!("    <address addr=\"{}\" addrtype=\"ipv4\"/>\n", h.ip));
        if let Some(mac) = h.mac {
            out.push_str(&format!("    <address addr=\"{mac}\" addrtype=\"mac\"/>\n"));
        }
        out.push_str("    <ports>\n");
        for (p, state) in &h.ports {
            out.push_str(&format!(
                "      <port protocol=\"{}\" portid=\"{}\"><state state=\"{}\"/></port>\n",
                p.protocol.token(),
                p.number,
                state.scanner_token()
            ));
        }
        out.push_str("    </ports>\n  </host>\n");
    }
    out.push_str("</nmaprun>\n");
    out
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

/// Converts a 1-based (row, column-in-chars) position to a byte offset.
fn byte_offset(text: &str, row: u32, col: u32) -> usize {
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == row as usize {
            let within: usize = line
                .chars()
                .take(col.saturating_sub(1) as usize)
                .map(char::len_utf8)
                .sum();
            return offset + within;
        }
        offset += line.len();
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXTRAPORTS: &str = r#"<?xml version="1.0"?>
<nmaprun scanner="nmap">
  <host><status state="up"/>
    <address addr="10.0.0.1" addrtype="ipv4"/>
    <address addr="aa:bb:cc:00:00:01" addrtype="mac"/>
    <ports>
      <port protocol="tcp" portid="22"><state state="open"/></port>
      <port protocol="tcp" portid="80"><state state="open"/></port>
      <port protocol="tcp" portid="443"><state state="closed"/></port>
    </ports>
  </host>
  <host><status state="up"/>
    <address addr="10.0.0.2" addrtype="ipv4"/>
    <ports>
      <extraports state="filtered" count="998"/>
      <port protocol="tcp" portid="80"><state state="closed"/></port>
    </ports>
  </host>
</nmaprun>"#;

    #[test]
    fn written_xml_reads_back() {
        let ds = ingest_scan(EXTRAPORTS, PortState::Closed).unwrap();
        let again = ingest_scan(&write_scan_xml(&ds), PortState::Closed).unwrap();
        assert_eq!(again.entries(), ds.entries());
    }

    #[test]
    fn smb_host_example() {
        let xml = r#"<nmaprun><host><status state="up"/>
            <address addr="10.0.1.12" addrtype="ipv4"/>
            <ports><port protocol="tcp" portid="445"><state state="open"/></port></ports>
            </host></nmaprun>"#;
        let ds = ingest_scan(xml, PortState::Closed).unwrap();
        assert_eq!(ds.len(), 1);
        let h = &ds.entries()[0];
        assert_eq!(h.ip, "10.0.1.12".parse::<Ipv4Addr>().unwrap());
        assert_eq!(h.mac, None);
        assert_eq!(h.ports.len(), 1);
        assert_eq!(h.state(&PortKey::tcp(445)), PortState::Open);
    }

    #[test]
    fn empty_host_list() {
        let ds = ingest_scan("<nmaprun></nmaprun>", PortState::Closed).unwrap();
        assert!(ds.is_empty());
        assert!(ds.port_universe().is_empty());
    }

    #[test]
    fn extraports_state_fills_unlisted_universe_ports() {
        let ds = ingest_scan(EXTRAPORTS, PortState::Closed).unwrap();
        assert_eq!(
            ds.port_universe(),
            &[PortKey::tcp(22), PortKey::tcp(80), PortKey::tcp(443)]
        );
        let second = &ds.entries()[1];
        assert_eq!(second.state(&PortKey::tcp(22)), PortState::Filtered);
        assert_eq!(second.state(&PortKey::tcp(80)), PortState::Closed);
        assert_eq!(second.state(&PortKey::tcp(443)), PortState::Filtered);
        assert_eq!(ds.entries()[0].mac.unwrap().to_string(), "AA:BB:CC:00:00:01");
    }

    #[test]
    fn default_state_applies_without_extraports() {
        let xml = EXTRAPORTS.replace(r#"<extraports state="filtered" count="998"/>"#, "");
        let ds = ingest_scan(&xml, PortState::OpenFiltered).unwrap();
        assert_eq!(ds.entries()[1].state(&PortKey::tcp(22)), PortState::OpenFiltered);
    }

    #[test]
    fn down_hosts_are_skipped() {
        let xml = r#"<nmaprun>
            <host><status state="down"/><address addr="10.0.0.9" addrtype="ipv4"/></host>
            <host><status state="up"/><address addr="10.0.0.8" addrtype="ipv4"/></host>
            </nmaprun>"#;
        let ds = ingest_scan(xml, PortState::Closed).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.entries()[0].ip.to_string(), "10.0.0.8");
    }

    #[test]
    fn malformed_xml_reports_byte_offset() {
        let xml = "<nmaprun>\n<host></hots>\n</nmaprun>";
        match ingest_scan(xml, PortState::Closed) {
            Err(Error::Xml { offset, .. }) => {
                assert!(offset > 10 && offset <= xml.len(), "offset {offset}");
            }
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ip_is_a_data_error() {
        let xml = r#"<nmaprun>
            <host><address addr="10.0.0.8" addrtype="ipv4"/></host>
            <host><address addr="10.0.0.8" addrtype="ipv4"/></host>
            </nmaprun>"#;
        assert!(matches!(ingest_scan(xml, PortState::Closed), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_state_strict_and_lenient() {
        let xml = r#"<nmaprun><host><address addr="10.0.0.8" addrtype="ipv4"/>
            <ports><port protocol="udp" portid="161"><state state="closed|filtered"/></port></ports>
            </host></nmaprun>"#;
        match ingest_scan(xml, PortState::Closed) {
            Err(Error::UnsupportedState(s)) => assert_eq!(s, "closed|filtered"),
            other => panic!("expected unsupported state, got {other:?}"),
        }
        let opts = IngestOptions {
            mode: StateMode::Lenient,
            ..IngestOptions::default()
        };
        let ds = ingest_scan_with(xml, &opts).unwrap();
        assert_eq!(ds.entries()[0].state(&PortKey::udp(161)), PortState::Filtered);
    }

    #[test]
    fn ingestion_is_deterministic() {
        let a = ingest_scan(EXTRAPORTS, PortState::Closed).unwrap();
        let b = ingest_scan(EXTRAPORTS, PortState::Closed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn byte_offset_handles_multibyte_lines() {
        let text = "ab\nçd\nef";
        assert_eq!(byte_offset(text, 2, 2), 5);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }
}
