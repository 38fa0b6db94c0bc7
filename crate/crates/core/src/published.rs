//! Published per-person and per-coin summary counts, and a deterministic
//! flip-level dataset consistent with them.
//!
//! The reconstruction matches every published margin exactly: same-side
//! counts and flips per person, heads and flips per coin, the number of
//! coins each person used and the number of people who used each coin.
//! How flips are distributed over person–coin pairs and over time is not
//! published, so those parts are synthetic.

use std::collections::{HashSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{FlipDataset, FlipRecord, Side};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonRow {
    pub name: &'static str,
    pub same: u64,
    pub flips: u64,
    pub coins: usize,
    pub site: &'static str,
    /// Proportion and 95% interval as printed (three decimals).
    pub printed: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinRow {
    pub name: &'static str,
    pub heads: u64,
    pub flips: u64,
    pub persons: usize,
    pub printed: [f64; 3],
}

/// Seed used whenever the reconstruction backs an analysis.
pub const DEFAULT_SEED: u64 = 1;
pub const TOTAL_FLIPS: u64 = 350_757;
pub const TOTAL_SAME: u64 = 178_079;
pub const TOTAL_HEADS: u64 = 175_421;
pub const COMBINED_PERSONS_PRINTED: [f64; 3] = [0.508, 0.506, 0.509];
pub const COMBINED_COINS_PRINTED: [f64; 3] = [0.500, 0.498, 0.502];

/// Persons whose same-side proportion exceeds 0.53.
pub const OUTLIERS: [&str; 4] = ["XiaochangZ", "FranziskaA", "JanY", "TianqiP"];
pub const EXCLUDED_FLIPS: u64 = 338_985;
pub const EXCLUDED_SAME: u64 = 171_517;
pub const EXCLUDED_HEADS: u64 = 169_635;

pub const PERSONS: [PersonRow; 48] = [
    PersonRow { name: "XiaoyiL", same: 780, flips: 1600, coins: 2, site: "Marathon-MSc", printed: [0.487, 0.463, 0.512] },
    PersonRow { name: "JoyceP", same: 1126, flips: 2300, coins: 3, site: "Marathon-MSc", printed: [0.490, 0.469, 0.510] },
    PersonRow { name: "AndreeaZ", same: 2204, flips: 4477, coins: 4, site: "Marathon-MSc", printed: [0.492, 0.478, 0.507] },
    PersonRow { name: "KaleemU", same: 7056, flips: 14324, coins: 8, site: "Bc Thesis", printed: [0.493, 0.484, 0.501] },
    PersonRow { name: "FelipeFV", same: 4957, flips: 10015, coins: 3, site: "Internet", printed: [0.495, 0.485, 0.505] },
    PersonRow { name: "ArneJ", same: 1937, flips: 3900, coins: 4, site: "Marathon-MSc", printed: [0.497, 0.481, 0.512] },
    PersonRow { name: "AmirS", same: 7458, flips: 15012, coins: 6, site: "Bc Thesis", printed: [0.497, 0.489, 0.505] },
    PersonRow { name: "ChrisGI", same: 4971, flips: 10005, coins: 5, site: "Marathon-Manheim", printed: [0.497, 0.487, 0.507] },
    PersonRow { name: "FrederikA", same: 5219, flips: 10500, coins: 5, site: "Internet", printed: [0.497, 0.487, 0.507] },
    PersonRow { name: "FranziskaN", same: 5368, flips: 10757, coins: 3, site: "Internet", printed: [0.499, 0.490, 0.508] },
    PersonRow { name: "JasonN", same: 3352, flips: 6700, coins: 7, site: "Marathon-PhD", printed: [0.500, 0.488, 0.512] },
    PersonRow { name: "RietvanB", same: 1801, flips: 3600, coins: 4, site: "Marathon-PhD", printed: [0.500, 0.484, 0.517] },
    PersonRow { name: "PierreG", same: 7506, flips: 15000, coins: 9, site: "Bc Thesis", printed: [0.500, 0.492, 0.508] },
    PersonRow { name: "KarolineH", same: 2761, flips: 5500, coins: 5, site: "Marathon-PhD", printed: [0.502, 0.489, 0.515] },
    PersonRow { name: "SjoerdT", same: 2510, flips: 5000, coins: 5, site: "Marathon-MSc", printed: [0.502, 0.488, 0.516] },
    PersonRow { name: "SaraS", same: 5022, flips: 10000, coins: 3, site: "Marathon-Manheim", printed: [0.502, 0.492, 0.512] },
    PersonRow { name: "HenrikG", same: 8649, flips: 17182, coins: 8, site: "Marathon", printed: [0.503, 0.496, 0.511] },
    PersonRow { name: "IrmaT", same: 353, flips: 701, coins: 1, site: "Bc Thesis", printed: [0.504, 0.467, 0.540] },
    PersonRow { name: "KatharinaK", same: 2220, flips: 4400, coins: 5, site: "Marathon-PhD", printed: [0.504, 0.490, 0.519] },
    PersonRow { name: "JillR", same: 3261, flips: 6463, coins: 2, site: "Marathon", printed: [0.505, 0.492, 0.517] },
    PersonRow { name: "FrantisekB", same: 10148, flips: 20100, coins: 11, site: "Marathon", printed: [0.505, 0.498, 0.512] },
    PersonRow { name: "IngeborgR", same: 4340, flips: 8596, coins: 1, site: "Marathon", printed: [0.505, 0.494, 0.515] },
    PersonRow { name: "VincentO", same: 2475, flips: 4900, coins: 5, site: "Marathon-MSc", printed: [0.505, 0.491, 0.519] },
    PersonRow { name: "EricJW", same: 2071, flips: 4100, coins: 5, site: "Marathon-MSc", printed: [0.505, 0.490, 0.520] },
    PersonRow { name: "MalteZ", same: 5559, flips: 11000, coins: 7, site: "Marathon-Manheim", printed: [0.505, 0.496, 0.515] },
    PersonRow { name: "TheresaL", same: 1769, flips: 3500, coins: 4, site: "Marathon-MSc", printed: [0.505, 0.489, 0.522] },
    PersonRow { name: "DavidV", same: 7586, flips: 14999, coins: 5, site: "Bc Thesis", printed: [0.506, 0.498, 0.514] },
    PersonRow { name: "AntonZ", same: 5069, flips: 10004, coins: 2, site: "Marathon-Manheim", printed: [0.507, 0.497, 0.516] },
    PersonRow { name: "MagdaM", same: 2510, flips: 4944, coins: 6, site: "Marathon-MSc", printed: [0.508, 0.494, 0.522] },
    PersonRow { name: "ThomasB", same: 2540, flips: 5000, coins: 5, site: "Marathon-PhD", printed: [0.508, 0.494, 0.522] },
    PersonRow { name: "JonasP", same: 5080, flips: 9996, coins: 5, site: "Marathon", printed: [0.508, 0.498, 0.518] },
    PersonRow { name: "BohanF", same: 1118, flips: 2200, coins: 3, site: "Marathon-MSc", printed: [0.508, 0.487, 0.529] },
    PersonRow { name: "HannahA", same: 1525, flips: 3000, coins: 4, site: "Marathon-MSc", printed: [0.508, 0.490, 0.526] },
    PersonRow { name: "AdrianK", same: 1749, flips: 3400, coins: 3, site: "Marathon-MSc", printed: [0.514, 0.498, 0.531] },
    PersonRow { name: "AaronL", same: 3815, flips: 7400, coins: 5, site: "Marathon-MSc", printed: [0.515, 0.504, 0.527] },
    PersonRow { name: "KoenD", same: 3309, flips: 6400, coins: 7, site: "Marathon-PhD", printed: [0.517, 0.505, 0.529] },
    PersonRow { name: "MichelleD", same: 2224, flips: 4300, coins: 5, site: "Marathon-PhD", printed: [0.517, 0.502, 0.532] },
    PersonRow { name: "RoyMM", same: 2020, flips: 3900, coins: 4, site: "Marathon-MSc", printed: [0.518, 0.502, 0.534] },
    PersonRow { name: "TingP", same: 1658, flips: 3200, coins: 4, site: "Marathon-MSc", printed: [0.518, 0.501, 0.535] },
    PersonRow { name: "MaraB", same: 1426, flips: 2750, coins: 3, site: "Marathon-MSc", printed: [0.518, 0.500, 0.537] },
    PersonRow { name: "AdamF", same: 4335, flips: 8328, coins: 2, site: "Marathon", printed: [0.520, 0.510, 0.531] },
    PersonRow { name: "AlexandraS", same: 9080, flips: 17434, coins: 8, site: "Marathon", printed: [0.521, 0.513, 0.528] },
    PersonRow { name: "MadlenH", same: 3705, flips: 7098, coins: 1, site: "Marathon", printed: [0.522, 0.510, 0.534] },
    PersonRow { name: "DavidKL", same: 7895, flips: 15000, coins: 1, site: "Bc Thesis", printed: [0.526, 0.518, 0.534] },
    PersonRow { name: "XiaochangZ", same: 1869, flips: 3481, coins: 4, site: "Marathon-MSc", printed: [0.537, 0.520, 0.553] },
    PersonRow { name: "FranziskaA", same: 2055, flips: 3800, coins: 4, site: "Marathon-MSc", printed: [0.541, 0.525, 0.557] },
    PersonRow { name: "JanY", same: 956, flips: 1691, coins: 2, site: "Marathon-MSc", printed: [0.565, 0.542, 0.589] },
    PersonRow { name: "TianqiP", same: 1682, flips: 2800, coins: 3, site: "Marathon-MSc", printed: [0.601, 0.582, 0.619] },
];

pub const COINS: [CoinRow; 44] = [
    CoinRow { name: "0.25CAD", heads: 48, flips: 100, persons: 1, printed: [0.480, 0.379, 0.582] },
    CoinRow { name: "20DEM-silver", heads: 484, flips: 1000, persons: 1, printed: [0.484, 0.453, 0.515] },
    CoinRow { name: "5CZK", heads: 1222, flips: 2500, persons: 2, printed: [0.489, 0.469, 0.509] },
    CoinRow { name: "0.05NZD", heads: 984, flips: 2011, persons: 1, printed: [0.489, 0.467, 0.511] },
    CoinRow { name: "0.10EUR", heads: 4515, flips: 9165, persons: 6, printed: [0.493, 0.482, 0.503] },
    CoinRow { name: "1DEM", heads: 2464, flips: 5000, persons: 5, printed: [0.493, 0.479, 0.507] },
    CoinRow { name: "50CZK", heads: 3207, flips: 6500, persons: 7, printed: [0.493, 0.481, 0.506] },
    CoinRow { name: "2HRK", heads: 4258, flips: 8596, persons: 1, printed: [0.495, 0.485, 0.506] },
    CoinRow { name: "1MXN", heads: 4180, flips: 8434, persons: 1, printed: [0.496, 0.485, 0.506] },
    CoinRow { name: "1SGD", heads: 7655, flips: 15400, persons: 2, printed: [0.497, 0.489, 0.505] },
    CoinRow { name: "5ZAR", heads: 3645, flips: 7325, persons: 1, printed: [0.498, 0.486, 0.509] },
    CoinRow { name: "2EUR", heads: 24276, flips: 48772, persons: 28, printed: [0.498, 0.493, 0.502] },
    CoinRow { name: "0.01GBP", heads: 498, flips: 1000, persons: 1, printed: [0.498, 0.467, 0.529] },
    CoinRow { name: "0.50EUR", heads: 28617, flips: 57445, persons: 32, printed: [0.498, 0.494, 0.502] },
    CoinRow { name: "0.20EUR", heads: 15665, flips: 31373, persons: 20, printed: [0.499, 0.494, 0.505] },
    CoinRow { name: "0.25BRL", heads: 1998, flips: 4000, persons: 2, printed: [0.499, 0.484, 0.515] },
    CoinRow { name: "0.10RON", heads: 1000, flips: 2001, persons: 1, printed: [0.500, 0.478, 0.522] },
    CoinRow { name: "1CHF", heads: 2249, flips: 4500, persons: 4, printed: [0.500, 0.485, 0.514] },
    CoinRow { name: "1EUR", heads: 18920, flips: 37829, persons: 25, printed: [0.500, 0.495, 0.505] },
    CoinRow { name: "0.20GEL", heads: 4501, flips: 8998, persons: 5, printed: [0.500, 0.490, 0.511] },
    CoinRow { name: "1CAD", heads: 5604, flips: 11200, persons: 11, printed: [0.500, 0.491, 0.510] },
    CoinRow { name: "2CAD", heads: 1502, flips: 3000, persons: 3, printed: [0.501, 0.483, 0.519] },
    CoinRow { name: "2MAD", heads: 1503, flips: 3000, persons: 1, printed: [0.501, 0.483, 0.519] },
    CoinRow { name: "100JPY", heads: 752, flips: 1500, persons: 1, printed: [0.501, 0.476, 0.527] },
    CoinRow { name: "2CHF", heads: 2259, flips: 4503, persons: 2, printed: [0.502, 0.487, 0.516] },
    CoinRow { name: "5MAD", heads: 1007, flips: 2001, persons: 1, printed: [0.503, 0.481, 0.525] },
    CoinRow { name: "0.20GBP", heads: 1516, flips: 3005, persons: 2, printed: [0.504, 0.486, 0.523] },
    CoinRow { name: "1CNY", heads: 757, flips: 1500, persons: 1, printed: [0.505, 0.479, 0.530] },
    CoinRow { name: "1CZK", heads: 505, flips: 1000, persons: 1, printed: [0.505, 0.474, 0.536] },
    CoinRow { name: "2ILS", heads: 506, flips: 1000, persons: 1, printed: [0.506, 0.475, 0.537] },
    CoinRow { name: "5JPY", heads: 1772, flips: 3500, persons: 2, printed: [0.506, 0.490, 0.523] },
    CoinRow { name: "5SEK", heads: 8052, flips: 15902, persons: 7, printed: [0.506, 0.499, 0.514] },
    CoinRow { name: "0.25USD", heads: 2180, flips: 4300, persons: 4, printed: [0.507, 0.492, 0.522] },
    CoinRow { name: "1MAD", heads: 1014, flips: 2000, persons: 1, printed: [0.507, 0.485, 0.529] },
    CoinRow { name: "0.50RON", heads: 1442, flips: 2844, persons: 3, printed: [0.507, 0.488, 0.526] },
    CoinRow { name: "0.05EUR", heads: 3821, flips: 7514, persons: 6, printed: [0.509, 0.497, 0.520] },
    CoinRow { name: "0.50GBP", heads: 765, flips: 1504, persons: 1, printed: [0.509, 0.483, 0.534] },
    CoinRow { name: "2BDT", heads: 2038, flips: 4003, persons: 2, printed: [0.509, 0.494, 0.525] },
    CoinRow { name: "10CZK", heads: 4572, flips: 8905, persons: 7, printed: [0.513, 0.503, 0.524] },
    CoinRow { name: "0.20CHF", heads: 518, flips: 1000, persons: 1, printed: [0.518, 0.487, 0.549] },
    CoinRow { name: "0.50SGD", heads: 1449, flips: 2781, persons: 3, printed: [0.521, 0.502, 0.540] },
    CoinRow { name: "0.02EUR", heads: 158, flips: 300, persons: 1, printed: [0.527, 0.468, 0.584] },
    CoinRow { name: "1GBP", heads: 791, flips: 1500, persons: 2, printed: [0.527, 0.502, 0.553] },
    CoinRow { name: "2INR", heads: 552, flips: 1046, persons: 1, printed: [0.528, 0.497, 0.558] },
];

/// Minimum flips for every person–coin pair (one full sequence).
pub const MIN_PAIR_FLIPS: u64 = 100;
pub const SEQUENCE_LENGTH: u64 = 100;

struct FlowEdge {
    to: usize,
    cap: u64,
}

/// Dinic maximum flow on a small dense problem.
struct Dinic {
    edges: Vec<FlowEdge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i64>,
    next: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic { edges: Vec::new(), adj: vec![Vec::new(); n], level: vec![0; n], next: vec![0; n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: u64) -> usize {
        self.adj[from].push(self.edges.len());
        self.edges.push(FlowEdge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(FlowEdge { to: from, cap: 0 });
        self.edges.len() - 2
    }

    /// Flow currently carried by edge `e` (as returned by `add`).
    fn flow(&self, e: usize) -> u64 {
        self.edges[e ^ 1].cap
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &e in &self.adj[v] {
                let to = self.edges[e].to;
                if self.edges[e].cap > 0 && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    q.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: u64) -> u64 {
        if v == t {
            return pushed;
        }
        while self.next[v] < self.adj[v].len() {
            let e = self.adj[v][self.next[v]];
            let to = self.edges[e].to;
            if self.edges[e].cap > 0 && self.level[to] == self.level[v] + 1 {
                let got = self.dfs(to, t, pushed.min(self.edges[e].cap));
                if got > 0 {
                    self.edges[e].cap -= got;
                    self.edges[e ^ 1].cap += got;
                    return got;
                }
            }
            self.next[v] += 1;
        }
        0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let mut total = 0;
        while self.bfs(s, t) {
            self.next.fill(0);
            loop {
                let f = self.dfs(s, t, u64::MAX);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
        total
    }
}

/// Flips per person–coin pair: `(person, coin, flips)` in table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub pairs: Vec<(usize, usize, u64)>,
}

/// Solves for pair sizes on a fixed edge set; returns the unmet demand and
/// the sizes (valid only when the deficit is zero).
fn transport(edges: &[(usize, usize)]) -> (u64, Vec<u64>) {
    let np = PERSONS.len();
    let nc = COINS.len();
    let (s, t) = (np + nc, np + nc + 1);
    let mut g = Dinic::new(np + nc + 2);
    let mut balance: Vec<i64> = PERSONS.iter().map(|p| p.flips as i64).chain(COINS.iter().map(|c| -(c.flips as i64))).collect();
    let ids: Vec<usize> = edges
        .iter()
        .map(|&(k, j)| {
            balance[k] -= MIN_PAIR_FLIPS as i64;
            balance[np + j] += MIN_PAIR_FLIPS as i64;
            g.add(k, np + j, u64::MAX / 4)
        })
        .collect();
    let mut need = 0u64;
    for (v, &b) in balance.iter().enumerate() {
        if b > 0 {
            g.add(s, v, b as u64);
            need += b as u64;
        } else if b < 0 {
            g.add(v, t, (-b) as u64);
        }
    }
    let unmet = need - g.max_flow(s, t);
    (unmet, ids.into_iter().map(|e| MIN_PAIR_FLIPS + g.flow(e)).collect())
}

/// Person–coin pairs with the published degrees and pair sizes that add up
/// to the published flip counts.
pub fn allocate(seed: u64) -> Result<Allocation> {
    let np = PERSONS.len();
    let nc = COINS.len();
    let mut remaining: Vec<i64> = COINS.iter().map(|c| c.persons as i64).collect();
    let mut order: Vec<usize> = (0..np).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(PERSONS[k].flips));
    let mut edges = Vec::new();
    for k in order {
        let mut coins: Vec<usize> = (0..nc).collect();
        coins.sort_by_key(|&j| (std::cmp::Reverse(remaining[j]), std::cmp::Reverse(COINS[j].flips), j));
        for &j in coins.iter().take(PERSONS[k].coins) {
            edges.push((k, j));
            remaining[j] -= 1;
        }
    }
    if remaining.iter().any(|&r| r != 0) {
        return Err(Error::Estimation("published partner counts do not form a bipartite degree sequence".into()));
    }
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut deficit, mut sizes) = transport(&edges);
    let mut tries = 0;
    while deficit > 0 {
        tries += 1;
        if tries > 200_000 {
            return Err(Error::Estimation(format!("no feasible allocation found (deficit {deficit})")));
        }
        let a = rng.random_range(0..edges.len());
        let b = rng.random_range(0..edges.len());
        let ((k1, j1), (k2, j2)) = (edges[a], edges[b]);
        if k1 == k2 || j1 == j2 || present.contains(&(k1, j2)) || present.contains(&(k2, j1)) {
            continue;
        }
        edges[a] = (k1, j2);
        edges[b] = (k2, j1);
        let (d, s) = transport(&edges);
        if d <= deficit {
            present.remove(&(k1, j1));
            present.remove(&(k2, j2));
            present.insert((k1, j2));
            present.insert((k2, j1));
            deficit = d;
            sizes = s;
        } else {
            edges[a] = (k1, j1);
            edges[b] = (k2, j2);
        }
    }
    let mut pairs: Vec<(usize, usize, u64)> = edges.into_iter().zip(sizes).map(|((k, j), n)| (k, j, n)).collect();
    pairs.sort_unstable();
    Ok(Allocation { pairs })
}

/// Splits `total` over `weights` proportionally by largest remainders
/// (ties to the lower index).
fn largest_remainder(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u64 = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<u64> = weights.iter().map(|&w| (total as u128 * w as u128 / sum as u128) as u64).collect();
    let mut rest = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((total as u128 * weights[i] as u128) % sum as u128), i));
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

/// A sequence of `n` chained flips with `same` same-side outcomes and
/// `heads` heads: the first start followed by the landed sides.
fn chained_sequence(n: u64, same: u64, heads: u64, rng: &mut ChaCha20Rng) -> Option<(Side, Vec<Side>)> {
    let changes = n - same;
    let tails = n - heads;
    for extra in [0u64, 1] {
        if changes + 1 < extra + 1 {
            continue;
        }
        let runs = changes + 1 - extra;
        for first in [Side::Heads, Side::Tails] {
            let (major, minor) = (runs.div_ceil(2), runs / 2);
            let (h_runs, t_runs) = if first == Side::Heads { (major, minor) } else { (minor, major) };
            let ok = |count: u64, r: u64| if r == 0 { count == 0 } else { count >= r };
            if !(ok(heads, h_runs) && ok(tails, t_runs)) {
                continue;
            }
            let h_parts = composition(heads, h_runs, rng);
            let t_parts = composition(tails, t_runs, rng);
            let mut landed = Vec::with_capacity(n as usize);
            let (mut hi, mut ti) = (0, 0);
            for r in 0..runs {
                let side = if (r % 2 == 0) == (first == Side::Heads) { Side::Heads } else { Side::Tails };
                let len = if side == Side::Heads {
                    hi += 1;
                    h_parts[hi - 1]
                } else {
                    ti += 1;
                    t_parts[ti - 1]
                };
                landed.extend(std::iter::repeat_n(side, len as usize));
            }
            let start = if extra == 1 { first.flip() } else { first };
            return Some((start, landed));
        }
    }
    None
}

/// Uniformly random composition of `total` into `parts` positive parts.
fn composition(total: u64, parts: u64, rng: &mut ChaCha20Rng) -> Vec<u64> {
    if parts == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<u64> = sample(rng, (total - 1) as usize, (parts - 1) as usize).into_iter().map(|c| c as u64 + 1).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    let mut out = Vec::with_capacity(parts as usize);
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

/// Same-side and heads counts per allocated pair.
fn pair_counts(alloc: &Allocation) -> Result<(Vec<u64>, Vec<u64>)> {
    let pairs = &alloc.pairs;
    let mut same = vec![0; pairs.len()];
    for (k, p) in PERSONS.iter().enumerate() {
        let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].0 == k).collect();
        let w: Vec<u64> = idx.iter().map(|&i| pairs[i].2).collect();
        for (i, s) in idx.into_iter().zip(largest_remainder(p.same, &w)) {
            same[i] = s;
        }
    }
    let mut heads = vec![0; pairs.len()];
    for (j, c) in COINS.iter().enumerate() {
        let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].1 == j).collect();
        let w: Vec<u64> = idx.iter().map(|&i| pairs[i].2).collect();
        for (i, h) in idx.into_iter().zip(largest_remainder(c.heads, &w)) {
            heads[i] = h;
        }
    }
    let outlier = |i: usize| OUTLIERS.contains(&PERSONS[pairs[i].0].name);
    let target = TOTAL_HEADS - EXCLUDED_HEADS;
    let mut current: u64 = (0..pairs.len()).filter(|&i| outlier(i)).map(|i| heads[i]).sum();
    let moves: Vec<(usize, usize)> = (0..pairs.len())
        .filter(|&a| outlier(a))
        .flat_map(|a| (0..pairs.len()).filter(move |&b| !outlier(b) && pairs[b].1 == pairs[a].1).map(move |b| (a, b)))
        .collect();
    let share = |h: u64, i: usize| h as f64 / pairs[i].2 as f64;
    while current != target {
        // one head at a time between the pair with the largest imbalance
        let up = current < target;
        let (from, to) = if up { (1, 0) } else { (0, 1) };
        let best = moves
            .iter()
            .map(|&(a, b)| [a, b])
            .filter(|p| heads[p[from]] > 0 && heads[p[to]] < pairs[p[to]].2)
            .max_by(|x, y| {
                let gap = |p: &[usize; 2]| share(heads[p[from]], p[from]) - share(heads[p[to]], p[to]);
                gap(x).total_cmp(&gap(y))
            });
        let Some(p) = best else { break };
        heads[p[from]] -= 1;
        heads[p[to]] += 1;
        if up {
            current += 1;
        } else {
            current -= 1;
        }
    }
    if current != target {
        return Err(Error::Estimation("cannot place the outliers' heads within their coins".into()));
    }
    Ok((same, heads))
}

/// Flip-level dataset consistent with the published tables, deterministic
/// in `seed`. Flips of a person run pair by pair in sequences of 100 with
/// the start of each flip equal to the previous landing.
pub fn reconstruct(seed: u64) -> Result<FlipDataset> {
    let alloc = allocate(seed)?;
    let (same, heads) = pair_counts(&alloc)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut records = Vec::with_capacity(TOTAL_FLIPS as usize);
    let mut index = vec![0u64; PERSONS.len()];
    let mut seq_no = vec![0usize; PERSONS.len()];
    for (i, &(k, j, n)) in alloc.pairs.iter().enumerate() {
        let full = n / SEQUENCE_LENGTH;
        let mut lengths = vec![SEQUENCE_LENGTH; full as usize];
        if n % SEQUENCE_LENGTH > 0 {
            lengths.push(n % SEQUENCE_LENGTH);
        }
        let s_split = largest_remainder(same[i], &lengths);
        let h_split = largest_remainder(heads[i], &lengths);
        for ((&len, &s), &h) in lengths.iter().zip(&s_split).zip(&h_split) {
            let (mut start, landed) = chained_sequence(len, s, h, &mut rng).ok_or_else(|| {
                Error::Estimation(format!("sequence of {len} flips with {s} same and {h} heads is not realizable"))
            })?;
            let sequence_id = format!("{}-{}", PERSONS[k].name, seq_no[k]);
            seq_no[k] += 1;
            for side in landed {
                records.push(FlipRecord {
                    person_id: PERSONS[k].name.into(),
                    coin_id: COINS[j].name.into(),
                    site: PERSONS[k].site.into(),
                    sequence_id: sequence_id.clone(),
                    flip_index: index[k],
                    start,
                    landed: side,
                });
                index[k] += 1;
                start = side;
            }
        }
    }
    FlipDataset::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_totals() {
        assert_eq!(PERSONS.iter().map(|p| p.flips).sum::<u64>(), TOTAL_FLIPS);
        assert_eq!(COINS.iter().map(|c| c.flips).sum::<u64>(), TOTAL_FLIPS);
        assert_eq!(PERSONS.iter().map(|p| p.same).sum::<u64>(), TOTAL_SAME);
        assert_eq!(COINS.iter().map(|c| c.heads).sum::<u64>(), TOTAL_HEADS);
        let kept = PERSONS.iter().filter(|p| !OUTLIERS.contains(&p.name));
        let (s, n) = kept.fold((0, 0), |(s, n), p| (s + p.same, n + p.flips));
        assert_eq!((s, n), (EXCLUDED_SAME, EXCLUDED_FLIPS));
    }

    #[test]
    fn max_flow_small() {
        let mut g = Dinic::new(4);
        g.add(0, 1, 3);
        g.add(0, 2, 2);
        g.add(1, 2, 5);
        g.add(1, 3, 2);
        g.add(2, 3, 3);
        assert_eq!(g.max_flow(0, 3), 5);
    }

    #[test]
    fn remainders_sum() {
        assert_eq!(largest_remainder(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[100, 100, 50]).iter().sum::<u64>(), 7);
    }

    #[test]
    fn sequences_are_realized() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for (n, s, h) in [(100, 51, 50), (1, 1, 0), (1, 0, 1), (7, 3, 4), (100, 60, 45), (2, 0, 1)] {
            let (start, landed) = chained_sequence(n, s, h, &mut rng).unwrap();
            assert_eq!(landed.len() as u64, n);
            assert_eq!(landed.iter().filter(|&&x| x == Side::Heads).count() as u64, h);
            let mut prev = start;
            let mut same = 0;
            for &l in &landed {
                same += (l == prev) as u64;
                prev = l;
            }
            assert_eq!(same, s, "{n} {s} {h}");
        }
        assert!(chained_sequence(3, 0, 3, &mut rng).is_none());
    }
}
