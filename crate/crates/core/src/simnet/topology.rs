use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::net::Ipv4Addr;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HostId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Client,
    Bridge,
    Relay,
    DirAuthority,
    WebServer,
    ScannerPool,
    Router,
}

#[derive(Debug, Clone)]
pub struct Host {
    pub id: HostId,
    pub name: String,
    pub region: Region,
    pub addresses: Vec<Ipv4Addr>,
    pub roles: BTreeSet<Role>,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub a: HostId,
    pub b: HostId,
    pub delay_s: u64,
    pub loss: f64,
    pub hops: u32,
    /// Crosses the China border; only such links may carry DPI/enforcement.
    pub border: bool,
    pub dpi: bool,
    pub enforce: bool,
}

/// A resolved route between two hosts.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub links: Vec<LinkId>,
    /// One-way delay; at least one second.
    pub delay_s: u64,
    pub hops: u32,
}

type Tree = Vec<Option<(LinkId, HostId)>>;

#[derive(Debug, Default)]
pub struct Network {
    hosts: Vec<Host>,
    links: Vec<Link>,
    adjacency: Vec<Vec<(LinkId, HostId)>>,
    owners: HashMap<Ipv4Addr, HostId>,
    leases: HashMap<Ipv4Addr, HostId>,
    trees: HashMap<HostId, Rc<Tree>>,
}

impl Network {
    pub fn new() -> Network {
        Network::default()
    }

    pub fn add_host(&mut self, name: &str, region: Region, addresses: Vec<Ipv4Addr>, roles: BTreeSet<Role>) -> HostId {
        let id = HostId(self.hosts.len() as u32);
        for addr in &addresses {
            let prev = self.owners.insert(*addr, id);
            assert!(prev.is_none(), "address {addr} owned by two hosts");
        }
        self.hosts.push(Host {
            id,
            name: name.to_string(),
            region,
            addresses,
            roles,
        });
        self.adjacency.push(Vec::new());
        self.trees.clear();
        id
    }

    pub fn add_link(&mut self, link: Link) -> LinkId {
        assert!((0.0..=1.0).contains(&link.loss), "loss probability out of range");
        assert!(link.hops >= 1, "hop count must be positive");
        let id = LinkId(self.links.len() as u32);
        self.adjacency[link.a.0 as usize].push((id, link.b));
        self.adjacency[link.b.0 as usize].push((id, link.a));
        self.links.push(link);
        self.trees.clear();
        id
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id.0 as usize]
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0 as usize]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn host_by_name(&self, name: &str) -> Option<HostId> {
        self.hosts.iter().find(|h| h.name == name).map(|h| h.id)
    }

    /// Current holder of `addr`: an active spoof lease wins over ownership.
    pub fn resolve(&self, addr: Ipv4Addr) -> Option<HostId> {
        self.leases.get(&addr).or_else(|| self.owners.get(&addr)).copied()
    }

    pub fn owner(&self, addr: Ipv4Addr) -> Option<HostId> {
        self.owners.get(&addr).copied()
    }

    /// Temporarily routes `addr` to `host` (scanner spoofing).
    pub fn lease(&mut self, addr: Ipv4Addr, host: HostId) {
        self.leases.insert(addr, host);
    }

    pub fn release(&mut self, addr: Ipv4Addr) {
        self.leases.remove(&addr);
    }

    pub fn is_leased(&self, addr: Ipv4Addr) -> bool {
        self.leases.contains_key(&addr)
    }

    /// Shortest route by (hop count, delay), ties broken by host id.
    pub fn route(&mut self, from: HostId, to: HostId) -> Option<Path> {
        let tree = match self.trees.get(&from) {
            Some(t) => Rc::clone(t),
            None => {
                let t = Rc::new(self.shortest_path_tree(from));
                self.trees.insert(from, Rc::clone(&t));
                t
            }
        };
        if from == to {
            return Some(Path {
                links: Vec::new(),
                delay_s: 1,
                hops: 1,
            });
        }
        let mut links = Vec::new();
        let mut cur = to;
        while cur != from {
            let (link, prev) = tree[cur.0 as usize]?;
            links.push(link);
            cur = prev;
        }
        links.reverse();
        let delay: u64 = links.iter().map(|l| self.link(*l).delay_s).sum();
        let hops = links.iter().map(|l| self.link(*l).hops).sum();
        Some(Path {
            links,
            delay_s: delay.max(1),
            hops,
        })
    }

    fn shortest_path_tree(&self, from: HostId) -> Tree {
        let n = self.hosts.len();
        let mut best: Vec<Option<(u64, u64)>> = vec![None; n];
        let mut tree: Tree = vec![None; n];
        let mut heap = BinaryHeap::new();
        best[from.0 as usize] = Some((0, 0));
        heap.push(Reverse((0u64, 0u64, from)));
        while let Some(Reverse((hops, delay, host))) = heap.pop() {
            if best[host.0 as usize] != Some((hops, delay)) {
                continue;
            }
            for &(link_id, next) in &self.adjacency[host.0 as usize] {
                let link = self.link(link_id);
                let cand = (hops + link.hops as u64, delay + link.delay_s);
                let slot = &mut best[next.0 as usize];
                if slot.is_none_or(|b| cand < b) {
                    *slot = Some(cand);
                    tree[next.0 as usize] = Some((link_id, host));
                    heap.push(Reverse((cand.0, cand.1, next)));
                }
            }
        }
        tree
    }
}
