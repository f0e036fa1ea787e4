//! Road network: links with BPR parameters and fixed passenger volumes.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::NetError;

/// A directed road segment.
///
/// Travel time for trucks follows the quartic BPR form
/// `eps_a + eps_b * ((x_lp + pce * x_t) / eps_c)^4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    /// 1-based node label.
    pub tail: usize,
    /// 1-based node label.
    pub head: usize,
    /// Free-flow time (hours).
    pub eps_a: f64,
    /// Congestion coefficient (hours).
    pub eps_b: f64,
    /// Capacity in passenger-car equivalents.
    pub eps_c: f64,
    /// Passenger vehicles on the link (fixed).
    pub x_lp: f64,
}

impl Link {
    fn check(&self) -> Result<(), String> {
        let finite = [self.eps_a, self.eps_b, self.eps_c, self.x_lp]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite parameter".into());
        }
        if self.eps_a < 0.0 {
            return Err(format!("eps_a must be >= 0, got {}", self.eps_a));
        }
        if self.eps_b < 0.0 {
            return Err(format!("eps_b must be >= 0, got {}", self.eps_b));
        }
        if self.eps_c <= 0.0 {
            return Err(format!("capacity eps_c must be > 0, got {}", self.eps_c));
        }
        if self.x_lp < 0.0 {
            return Err(format!("x_lp must be >= 0, got {}", self.x_lp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_count: usize,
    links: Vec<Link>,
    outgoing: Vec<Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl Network {
    /// Builds a network, validating node references, ids and link parameters.
    pub fn new(node_count: usize, links: Vec<Link>) -> Result<Self, NetError> {
        let mut outgoing = vec![Vec::new(); node_count];
        let mut by_id = HashMap::with_capacity(links.len());
        for (idx, link) in links.iter().enumerate() {
            for node in [link.tail, link.head] {
                if node == 0 || node > node_count {
                    return Err(NetError::UnknownNode {
                        line: None,
                        node,
                        nodes: node_count,
                    });
                }
            }
            if by_id.insert(link.id.clone(), idx).is_some() {
                return Err(NetError::DuplicateLink {
                    line: None,
                    id: link.id.clone(),
                });
            }
            link.check().map_err(|reason| NetError::BadLink {
                line: None,
                id: link.id.clone(),
                reason,
            })?;
            outgoing[link.tail - 1].push(idx);
        }
        Ok(Network {
            node_count,
            links,
            outgoing,
            by_id,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    /// Index of the link with the given id.
    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Outgoing link indices of a 1-based node.
    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node - 1]
    }

    /// Returns a copy with replaced link parameters, keeping topology and ids.
    pub fn with_parameters<F>(&self, mut f: F) -> Result<Self, NetError>
    where
        F: FnMut(usize, &Link) -> (f64, f64, f64, f64),
    {
        let links = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (eps_a, eps_b, eps_c, x_lp) = f(i, l);
                Link {
                    eps_a,
                    eps_b,
                    eps_c,
                    x_lp,
                    ..l.clone()
                }
            })
            .collect();
        Network::new(self.node_count, links)
    }

    /// Native text form; `parse_network` reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.node_count);
        for l in &self.links {
            let _ = writeln!(
                out,
                "link {} {} {} {} {} {} {}",
                l.id, l.tail, l.head, l.eps_a, l.eps_b, l.eps_c, l.x_lp
            );
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn parse_f64(tok: &str, what: &str, line: usize) -> Result<f64, NetError> {
    tok.parse::<f64>().map_err(|_| NetError::Malformed {
        line,
        reason: format!("{what}: cannot parse `{tok}` as a number"),
    })
}

fn parse_node(tok: &str, line: usize) -> Result<usize, NetError> {
    tok.parse::<usize>().map_err(|_| NetError::Malformed {
        line,
        reason: format!("node label `{tok}` is not a positive integer"),
    })
}

/// Parses the native link-table format.
///
/// ```text
/// nodes 2
/// # id tail head eps_a eps_b eps_c x_lp
/// link A 1 2 1 0 1 0
/// ```
pub fn parse_network(text: &str) -> Result<Network, NetError> {
    let mut node_count: Option<usize> = None;
    let mut links = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks: Vec<&str> = strip_comment(raw).split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "nodes" => {
                if node_count.is_some() {
                    return Err(NetError::Malformed {
                        line: lineno,
                        reason: "duplicate `nodes` header".into(),
                    });
                }
                if toks.len() != 2 {
                    return Err(NetError::Malformed {
                        line: lineno,
                        reason: "expected `nodes <count>`".into(),
                    });
                }
                node_count = Some(toks[1].parse().map_err(|_| NetError::Malformed {
                    line: lineno,
                    reason: format!("bad node count `{}`", toks[1]),
                })?);
            }
            "link" => {
                let nodes = node_count.ok_or(NetError::Malformed {
                    line: lineno,
                    reason: "`link` row before the `nodes` header".into(),
                })?;
                if toks.len() != 8 {
                    return Err(NetError::Malformed {
                        line: lineno,
                        reason: format!(
                            "expected `link <id> <tail> <head> <eps_a> <eps_b> <eps_c> <x_lp>`, got {} fields",
                            toks.len()
                        ),
                    });
                }
                let id = toks[1].to_string();
                let tail = parse_node(toks[2], lineno)?;
                let head = parse_node(toks[3], lineno)?;
                for node in [tail, head] {
                    if node == 0 || node > nodes {
                        return Err(NetError::UnknownNode {
                            line: Some(lineno),
                            node,
                            nodes,
                        });
                    }
                }
                let link = Link {
                    id: id.clone(),
                    tail,
                    head,
                    eps_a: parse_f64(toks[4], "eps_a", lineno)?,
                    eps_b: parse_f64(toks[5], "eps_b", lineno)?,
                    eps_c: parse_f64(toks[6], "eps_c", lineno)?,
                    x_lp: parse_f64(toks[7], "x_lp", lineno)?,
                };
                if let Some(prev) = seen.insert(id.clone(), lineno) {
                    return Err(NetError::DuplicateLink {
                        line: Some(lineno),
                        id: format!("{id} (first defined on line {prev})"),
                    });
                }
                link.check().map_err(|reason| NetError::BadLink {
                    line: Some(lineno),
                    id: id.clone(),
                    reason,
                })?;
                links.push(link);
            }
            other => {
                return Err(NetError::Malformed {
                    line: lineno,
                    reason: format!("unknown record `{other}`"),
                })
            }
        }
    }
    let nodes = node_count.ok_or(NetError::Malformed {
        line: 1,
        reason: "missing `nodes <count>` header".into(),
    })?;
    Network::new(nodes, links)
}

/// Imports a TNTP `_net.tntp` link table.
///
/// Free-flow time becomes `eps_a`, `B * free_flow_time` becomes `eps_b`,
/// capacity becomes `eps_c`; passenger volume is zero. Link ids are the
/// 1-based row numbers. Only BPR power 4 is accepted.
pub fn parse_tntp(text: &str) -> Result<Network, NetError> {
    let mut node_count: Option<usize> = None;
    let mut in_body = false;
    let mut links = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !in_body {
            if let Some(rest) = line.strip_prefix("<NUMBER OF NODES>") {
                node_count = Some(rest.trim().parse().map_err(|_| NetError::Malformed {
                    line: lineno,
                    reason: format!("bad node count `{}`", rest.trim()),
                })?);
            } else if line.starts_with("<END OF METADATA>") {
                in_body = true;
            }
            continue;
        }
        let body = line.trim_end_matches(';');
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() < 7 {
            return Err(NetError::Malformed {
                line: lineno,
                reason: format!("expected at least 7 TNTP columns, got {}", toks.len()),
            });
        }
        let nodes = node_count.ok_or(NetError::Malformed {
            line: lineno,
            reason: "missing <NUMBER OF NODES> metadata".into(),
        })?;
        let tail = parse_node(toks[0], lineno)?;
        let head = parse_node(toks[1], lineno)?;
        for node in [tail, head] {
            if node == 0 || node > nodes {
                return Err(NetError::UnknownNode {
                    line: Some(lineno),
                    node,
                    nodes,
                });
            }
        }
        let capacity = parse_f64(toks[2], "capacity", lineno)?;
        let fft = parse_f64(toks[4], "free_flow_time", lineno)?;
        let b = parse_f64(toks[5], "b", lineno)?;
        let power = parse_f64(toks[6], "power", lineno)?;
        if power != 4.0 {
            return Err(NetError::Malformed {
                line: lineno,
                reason: format!("only BPR power 4 is supported, got {power}"),
            });
        }
        let link = Link {
            id: (links.len() + 1).to_string(),
            tail,
            head,
            eps_a: fft,
            eps_b: b * fft,
            eps_c: capacity,
            x_lp: 0.0,
        };
        link.check().map_err(|reason| NetError::BadLink {
            line: Some(lineno),
            id: link.id.clone(),
            reason,
        })?;
        links.push(link);
    }
    let nodes = node_count.ok_or(NetError::Malformed {
        line: 1,
        reason: "missing <NUMBER OF NODES> metadata".into(),
    })?;
    Network::new(nodes, links)
}
