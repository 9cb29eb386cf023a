//! Frequency-based timetable graph and path-alternative enumeration.
//!
//! Lines run in both directions with a fixed headway; boarding a line costs
//! an expected wait of half its headway. A path is a sequence of legs, each
//! either a ride along one line or a footpath walk, that never visits a
//! station twice and never rides the same line on two consecutive legs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub name: String,
    pub stops: Vec<String>,
    /// Minutes between consecutive stops; one fewer than `stops`.
    pub run_times: Vec<f64>,
    /// Minutes between departures.
    pub headway: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub a: String,
    pub b: String,
    pub walk_time: f64,
}

/// On-disk graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub stations: Vec<String>,
    /// Stations where passengers enter and exit; all stations when empty.
    #[serde(default)]
    pub access: Vec<String>,
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub transfers: Vec<TransferSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub stops: Vec<usize>,
    pub run_times: Vec<f64>,
    pub headway: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Leg {
    Ride { line: usize, from: usize, to: usize },
    Walk { from: usize, to: usize },
}

/// One route between an origin and a destination with its choice attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAlternative {
    /// In-vehicle minutes.
    pub z1: f64,
    /// Expected wait minutes.
    pub z2: f64,
    /// Walking minutes on transfer footpaths.
    pub z3: f64,
    /// Number of transfers (boardings minus one, never negative).
    pub z4: u32,
    pub total_time: f64,
    pub legs: Vec<Leg>,
}

impl PathAlternative {
    pub fn attributes(&self) -> [f64; 4] {
        [self.z1, self.z2, self.z3, self.z4 as f64]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimetableGraph {
    names: Vec<String>,
    lines: Vec<Line>,
    transfers: Vec<(usize, usize, f64)>,
    access: Vec<usize>,
    /// (line, position) pairs serving each station.
    serving: Vec<Vec<(usize, usize)>>,
    walks: Vec<Vec<(usize, f64)>>,
}

fn lookup(index: &HashMap<&str, usize>, name: &str) -> Result<usize> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| invalid(format!("unknown station '{name}'")))
}

impl TimetableGraph {
    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let index: HashMap<&str, usize> = spec
            .stations
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        if index.len() != spec.stations.len() {
            return Err(invalid("duplicate station names"));
        }
        let n = spec.stations.len();
        let mut lines = Vec::with_capacity(spec.lines.len());
        let mut serving = vec![Vec::new(); n];
        for (l, ls) in spec.lines.iter().enumerate() {
            if ls.stops.len() < 2 || ls.run_times.len() + 1 != ls.stops.len() {
                return Err(invalid(format!(
                    "line {} needs at least 2 stops and one run time per segment",
                    ls.name
                )));
            }
            if ls.run_times.iter().any(|t| !(*t >= 0.0)) || !(ls.headway >= 0.0) {
                return Err(invalid(format!("line {} has a negative time", ls.name)));
            }
            let stops = ls
                .stops
                .iter()
                .map(|s| lookup(&index, s))
                .collect::<Result<Vec<_>>>()?;
            for (pos, &s) in stops.iter().enumerate() {
                if stops[..pos].contains(&s) {
                    return Err(invalid(format!("line {} visits a station twice", ls.name)));
                }
                serving[s].push((l, pos));
            }
            lines.push(Line {
                name: ls.name.clone(),
                stops,
                run_times: ls.run_times.clone(),
                headway: ls.headway,
            });
        }
        let mut walks = vec![Vec::new(); n];
        let mut transfers = Vec::with_capacity(spec.transfers.len());
        for t in &spec.transfers {
            let (a, b) = (lookup(&index, &t.a)?, lookup(&index, &t.b)?);
            if a == b || !(t.walk_time >= 0.0) {
                return Err(invalid(format!("bad footpath {} - {}", t.a, t.b)));
            }
            walks[a].push((b, t.walk_time));
            walks[b].push((a, t.walk_time));
            transfers.push((a, b, t.walk_time));
        }
        let access = if spec.access.is_empty() {
            (0..n).collect()
        } else {
            spec.access
                .iter()
                .map(|s| lookup(&index, s))
                .collect::<Result<Vec<_>>>()?
        };
        let g = Self {
            names: spec.stations.clone(),
            lines,
            transfers,
            access,
            serving,
            walks,
        };
        g.check_connected()?;
        Ok(g)
    }

    pub fn to_spec(&self) -> GraphSpec {
        let name = |k: usize| self.names[k].clone();
        GraphSpec {
            stations: self.names.clone(),
            access: self.access.iter().map(|&k| name(k)).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineSpec {
                    name: l.name.clone(),
                    stops: l.stops.iter().map(|&k| name(k)).collect(),
                    run_times: l.run_times.clone(),
                    headway: l.headway,
                })
                .collect(),
            transfers: self
                .transfers
                .iter()
                .map(|&(a, b, w)| TransferSpec {
                    a: name(a),
                    b: name(b),
                    walk_time: w,
                })
                .collect(),
        }
    }

    fn neighbours(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let rides = self.serving[u].iter().flat_map(move |&(l, pos)| {
            let line = &self.lines[l];
            let prev = (pos > 0).then(|| (line.stops[pos - 1], line.run_times[pos - 1]));
            let next = (pos + 1 < line.stops.len()).then(|| (line.stops[pos + 1], line.run_times[pos]));
            prev.into_iter().chain(next)
        });
        rides.chain(self.walks[u].iter().copied())
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(invalid("graph has no stations"));
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for (v, _) in self.neighbours(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(Error::NoPath {
                origin: 0,
                destination: v,
            }),
            None => Ok(()),
        }
    }

    pub fn station_count(&self) -> usize {
        self.names.len()
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }
    pub fn access(&self) -> &[usize] {
        &self.access
    }
    pub fn transfers(&self) -> &[(usize, usize, f64)] {
        &self.transfers
    }

    pub fn access_labels(&self) -> Vec<String> {
        self.access.iter().map(|&k| self.names[k].clone()).collect()
    }

    pub fn has_footpath(&self, a: usize, b: usize) -> bool {
        self.walks[a].iter().any(|&(v, _)| v == b)
    }

    /// Shortest travel time to `dest` ignoring waits; a lower bound on any path.
    fn lower_bounds(&self, dest: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.names.len()];
        let mut heap = BinaryHeap::new();
        dist[dest] = 0.0;
        heap.push(Entry(0.0, dest));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for (v, w) in self.neighbours(u) {
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(Entry(d + w, v));
                }
            }
        }
        dist
    }

    /// Earliest arrival time over (station, line) states.
    fn earliest_arrival(&self, origin: usize, dest: usize) -> f64 {
        let nl = self.lines.len();
        let n = self.names.len();
        // State index: station * (nl + 1) + (line + 1); slot 0 means on foot.
        let idx = |s: usize, l: Option<usize>| s * (nl + 1) + l.map_or(0, |l| l + 1);
        let mut dist = vec![f64::INFINITY; n * (nl + 1)];
        let mut heap = BinaryHeap::new();
        dist[idx(origin, None)] = 0.0;
        heap.push(Entry(0.0, idx(origin, None)));
        while let Some(Entry(d, k)) = heap.pop() {
            if d > dist[k] {
                continue;
            }
            let (s, slot) = (k / (nl + 1), k % (nl + 1));
            if s == dest && slot == 0 {
                return d;
            }
            let mut relax = |t: usize, w: f64, heap: &mut BinaryHeap<Entry>| {
                if d + w < dist[t] {
                    dist[t] = d + w;
                    heap.push(Entry(d + w, t));
                }
            };
            if slot == 0 {
                for &(l, _) in &self.serving[s] {
                    relax(idx(s, Some(l)), self.lines[l].headway / 2.0, &mut heap);
                }
                for &(v, w) in &self.walks[s] {
                    relax(idx(v, None), w, &mut heap);
                }
            } else {
                let l = slot - 1;
                relax(idx(s, None), 0.0, &mut heap);
                let line = &self.lines[l];
                let pos = line.stops.iter().position(|&x| x == s).expect("line serves station");
                if pos > 0 {
                    relax(idx(line.stops[pos - 1], Some(l)), line.run_times[pos - 1], &mut heap);
                }
                if pos + 1 < line.stops.len() {
                    relax(idx(line.stops[pos + 1], Some(l)), line.run_times[pos], &mut heap);
                }
            }
        }
        f64::INFINITY
    }

    /// The earliest-arrival path plus every simple alternative whose total
    /// time is within `arrival_margin` minutes of it. Waits are expected
    /// values, so `departure_time` only shifts arrival clocks and does not
    /// change the set. Sorted by total time.
    pub fn enumerate_paths(
        &self,
        origin: usize,
        destination: usize,
        departure_time: f64,
        arrival_margin: f64,
    ) -> Result<Vec<PathAlternative>> {
        let _ = departure_time;
        let n = self.names.len();
        if origin >= n || destination >= n || origin == destination {
            return Err(invalid(format!("bad OD pair ({origin}, {destination})")));
        }
        let best = self.earliest_arrival(origin, destination);
        if !best.is_finite() {
            return Err(Error::NoPath {
                origin,
                destination,
            });
        }
        let bound = best + arrival_margin + 1e-9;
        let mut search = Search {
            g: self,
            dest: destination,
            lb: self.lower_bounds(destination),
            bound,
            visited: vec![false; n],
            legs: Vec::new(),
            out: Vec::new(),
        };
        search.visited[origin] = true;
        search.dfs(origin, None, [0.0; 3], 0);
        let mut out = search.out;
        let found_best = out.iter().map(|p| p.total_time).fold(f64::INFINITY, f64::min);
        out.retain(|p| p.total_time <= found_best + arrival_margin + 1e-9);
        out.sort_by(|a, b| {
            a.total_time
                .total_cmp(&b.total_time)
                .then(a.z4.cmp(&b.z4))
                .then(a.z1.total_cmp(&b.z1))
        });
        if out.is_empty() {
            return Err(Error::NoPath {
                origin,
                destination,
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Last {
    Ride(usize),
    Walk,
}

struct Search<'a> {
    g: &'a TimetableGraph,
    dest: usize,
    lb: Vec<f64>,
    bound: f64,
    visited: Vec<bool>,
    legs: Vec<Leg>,
    out: Vec<PathAlternative>,
}

impl Search<'_> {
    /// `z` holds (in-vehicle, wait, walk) minutes so far.
    fn dfs(&mut self, u: usize, last: Option<Last>, z: [f64; 3], boardings: u32) {
        if u == self.dest {
            self.out.push(PathAlternative {
                z1: z[0],
                z2: z[1],
                z3: z[2],
                z4: boardings.saturating_sub(1),
                total_time: z[0] + z[1] + z[2],
                legs: self.legs.clone(),
            });
            return;
        }
        let cost = z[0] + z[1] + z[2];
        let g = self.g;
        for &(l, pos) in &g.serving[u] {
            if last == Some(Last::Ride(l)) {
                continue;
            }
            let line = &g.lines[l];
            let wait = line.headway / 2.0;
            for forward in [true, false] {
                let mut ride = 0.0;
                let mut marked = Vec::new();
                let mut p = pos;
                loop {
                    let (next, seg) = if forward {
                        if p + 1 >= line.stops.len() {
                            break;
                        }
                        (p + 1, line.run_times[p])
                    } else {
                        if p == 0 {
                            break;
                        }
                        (p - 1, line.run_times[p - 1])
                    };
                    let v = line.stops[next];
                    if self.visited[v] {
                        break;
                    }
                    ride += seg;
                    if cost + wait + ride + self.lb[v] > self.bound {
                        break;
                    }
                    self.visited[v] = true;
                    marked.push(v);
                    self.legs.push(Leg::Ride {
                        line: l,
                        from: u,
                        to: v,
                    });
                    self.dfs(v, Some(Last::Ride(l)), [z[0] + ride, z[1] + wait, z[2]], boardings + 1);
                    self.legs.pop();
                    if v == self.dest {
                        break;
                    }
                    p = next;
                }
                for v in marked {
                    self.visited[v] = false;
                }
            }
        }
        for &(v, w) in &g.walks[u] {
            if self.visited[v] || cost + w + self.lb[v] > self.bound {
                continue;
            }
            self.visited[v] = true;
            self.legs.push(Leg::Walk { from: u, to: v });
            self.dfs(v, Some(Last::Walk), [z[0], z[1], z[2] + w], boardings);
            self.legs.pop();
            self.visited[v] = false;
        }
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(name: &str, stops: &[&str], run: &[f64], headway: f64) -> LineSpec {
        LineSpec {
            name: name.into(),
            stops: stops.iter().map(|s| s.to_string()).collect(),
            run_times: run.to_vec(),
            headway,
        }
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn single_segment_has_one_alternative() {
        let g = TimetableGraph::from_spec(&GraphSpec {
            stations: names(2),
            access: vec![],
            lines: vec![line("L", &["s0", "s1"], &[5.0], 4.0)],
            transfers: vec![],
        })
        .unwrap();
        let p = g.enumerate_paths(0, 1, 480.0, 10.0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].z1, p[0].z2, p[0].z3, p[0].z4), (5.0, 2.0, 0.0, 0));
        assert_eq!(p[0].total_time, 7.0);
    }

    #[test]
    fn parallel_lines_both_within_margin() {
        let g = TimetableGraph::from_spec(&GraphSpec {
            stations: names(2),
            access: vec![],
            lines: vec![
                line("fast", &["s0", "s1"], &[10.0], 4.0),
                line("slow", &["s0", "s1"], &[12.0], 4.0),
            ],
            transfers: vec![],
        })
        .unwrap();
        let p = g.enumerate_paths(0, 1, 480.0, 10.0).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].z1, 10.0);
        assert_eq!(p[1].z1, 12.0);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = TimetableGraph::from_spec(&GraphSpec {
            stations: names(3),
            access: vec![],
            lines: vec![line("L", &["s0", "s1"], &[5.0], 4.0)],
            transfers: vec![],
        });
        assert!(matches!(err, Err(Error::NoPath { .. })));
    }

    /// Every simple path over labelled edges (one edge per line segment or
    /// footpath), costed by merging runs of the same line into one boarding.
    fn brute_force(g: &TimetableGraph, o: usize, d: usize, margin: f64) -> Vec<(u32, i64)> {
        #[derive(Clone, Copy)]
        enum E {
            Seg(usize, f64),
            Foot(f64),
        }
        let n = g.station_count();
        let mut adj: Vec<Vec<(usize, E)>> = vec![Vec::new(); n];
        for (l, line) in g.lines().iter().enumerate() {
            for k in 0..line.run_times.len() {
                let (a, b, t) = (line.stops[k], line.stops[k + 1], line.run_times[k]);
                adj[a].push((b, E::Seg(l, t)));
                adj[b].push((a, E::Seg(l, t)));
            }
        }
        for &(a, b, w) in g.transfers() {
            adj[a].push((b, E::Foot(w)));
            adj[b].push((a, E::Foot(w)));
        }
        let mut all = Vec::new();
        fn go(
            u: usize,
            d: usize,
            adj: &[Vec<(usize, E)>],
            seen: &mut Vec<bool>,
            path: &mut Vec<E>,
            all: &mut Vec<Vec<E>>,
        ) {
            if u == d {
                all.push(path.clone());
                return;
            }
            for &(v, e) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    path.push(e);
                    go(v, d, adj, seen, path, all);
                    path.pop();
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; n];
        seen[o] = true;
        go(o, d, &adj, &mut seen, &mut Vec::new(), &mut all);
        let costed: Vec<(f64, u32)> = all
            .iter()
            .map(|p| {
                let mut total = 0.0;
                let mut boardings = 0u32;
                let mut prev: Option<usize> = None;
                for e in p {
                    match *e {
                        E::Seg(l, t) => {
                            if prev != Some(l) {
                                boardings += 1;
                                total += g.lines()[l].headway / 2.0;
                            }
                            total += t;
                            prev = Some(l);
                        }
                        E::Foot(w) => {
                            total += w;
                            prev = None;
                        }
                    }
                }
                (total, boardings.saturating_sub(1))
            })
            .collect();
        let best = costed.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let mut keep: Vec<(u32, i64)> = costed
            .into_iter()
            .filter(|c| c.0 <= best + margin + 1e-9)
            .map(|(t, z4)| (z4, (t * 1e6).round() as i64))
            .collect();
        keep.sort();
        keep
    }

    #[test]
    fn enumeration_matches_brute_force_on_two_line_graph() {
        // Line A: s0-s1-s2-s3, line B: s4-s2-s1 (shares two segments),
        // plus a footpath s3-s4.
        let g = TimetableGraph::from_spec(&GraphSpec {
            stations: names(5),
            access: vec![],
            lines: vec![
                line("A", &["s0", "s1", "s2", "s3"], &[3.0, 4.0, 5.0], 6.0),
                line("B", &["s4", "s2", "s1"], &[2.0, 4.5], 8.0),
            ],
            transfers: vec![TransferSpec {
                a: "s3".into(),
                b: "s4".into(),
                walk_time: 3.0,
            }],
        })
        .unwrap();
        for o in 0..5 {
            for d in 0..5 {
                if o == d {
                    continue;
                }
                for margin in [0.0, 4.0, 10.0, 100.0] {
                    let mut ours: Vec<(u32, i64)> = g
                        .enumerate_paths(o, d, 480.0, margin)
                        .unwrap()
                        .iter()
                        .map(|p| (p.z4, (p.total_time * 1e6).round() as i64))
                        .collect();
                    ours.sort();
                    assert_eq!(ours, brute_force(&g, o, d, margin), "pair ({o}, {d}) margin {margin}");
                }
            }
        }
    }
}
