//! Interaction and knowledge-graph ingestion, splits and samplers.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Number of sampled negatives per evaluated user.
pub const TEST_NEGATIVES: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Deterministic RNG for a (seed, stream, a, b) tuple.
pub fn rng_for(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let h = mix(mix(mix(mix(seed) ^ stream) ^ a) ^ b);
    ChaCha8Rng::seed_from_u64(h)
}

pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const NEIGHBORS: u64 = 2;
    pub const TRIPLES: u64 = 3;
    pub const CANDIDATES: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SYNTH: u64 = 6;
}

/// Dense id assignment for string tokens, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn get(&self, tok: &str) -> Option<u32> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Two-column `token<TAB>id` file, preceded by an optional `#` line.
    pub fn write_tsv(&self, path: &Path, header: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(&format!("# {h}\n"));
        }
        for (id, tok) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{tok}\t{id}\n"));
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Implicit feedback: per-user sorted, deduplicated item lists.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionStore {
    pub n_users: usize,
    pub n_items: usize,
    positives: Vec<Vec<u32>>,
}

impl InteractionStore {
    pub fn new(n_users: usize, n_items: usize) -> Self {
        InteractionStore {
            n_users,
            n_items,
            positives: vec![Vec::new(); n_users],
        }
    }

    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Self {
        let mut s = Self::new(n_users, n_items);
        for (u, v) in pairs {
            s.positives[u as usize].push(v);
        }
        for p in &mut s.positives {
            p.sort_unstable();
            p.dedup();
        }
        s
    }

    pub fn positives(&self, u: u32) -> &[u32] {
        &self.positives[u as usize]
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        self.positives[u as usize].binary_search(&v).is_ok()
    }

    pub fn len(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u as u32, v)))
    }

    /// Per-item interaction counts.
    pub fn item_popularity(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items];
        for (_, v) in self.pairs() {
            c[v as usize] += 1;
        }
        c
    }

    pub fn write_tsv(&self, path: &Path, header: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(&format!("# {h}\n"));
        }
        for (u, v) in self.pairs() {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Popularity tertile of every item: 0 for the most interacted third, 2
/// for the least. Items are ordered by count, then id, and cut into three
/// groups whose sizes differ by at most one.
pub fn popularity_tertiles(store: &InteractionStore) -> Vec<u8> {
    let pop = store.item_popularity();
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| pop[b].cmp(&pop[a]).then(a.cmp(&b)));
    let n = pop.len();
    let mut out = vec![0u8; n];
    for (rank, &v) in order.iter().enumerate() {
        out[v] = (rank * 3 / n.max(1)) as u8;
    }
    out
}

/// Text layout of an interaction file.
#[derive(Debug, Clone)]
pub struct InteractionFormat {
    pub separator: String,
    /// Ratings at or above this are positives; `None` accepts every record.
    pub rating_threshold: Option<f64>,
    pub skip_header: bool,
}

impl InteractionFormat {
    pub fn movielens() -> Self {
        InteractionFormat {
            separator: "::".into(),
            rating_threshold: Some(4.0),
            skip_header: false,
        }
    }

    pub fn tab() -> Self {
        InteractionFormat {
            separator: "\t".into(),
            rating_threshold: None,
            skip_header: false,
        }
    }
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(BufReader::new(f).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Reads `user SEP item [SEP rating [SEP timestamp]]` records.
///
/// Ids are assigned in first-seen order among positive records only, so users
/// without positives never receive an id.
pub fn load_interactions(
    path: &Path,
    fmt: &InteractionFormat,
) -> Result<(InteractionStore, Vocab, Vocab)> {
    let mut users = Vocab::default();
    let mut items = Vocab::default();
    let mut pairs = Vec::new();
    let parse_err = |line, msg: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (no, line) in lines(path)? {
        let line = line.map_err(io_err(path))?;
        if (fmt.skip_header && no == 1) || is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(fmt.separator.as_str()).collect();
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(no, format!("expected user and item, got {line:?}")));
        }
        let rating = match fields.get(2) {
            Some(r) => r
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(no, format!("bad rating {r:?}: {e}")))?,
            None => 1.0,
        };
        if fmt.rating_threshold.is_some_and(|t| rating < t) {
            continue;
        }
        let u = users.intern(fields[0].trim());
        let v = items.intern(fields[1].trim());
        pairs.push((u, v));
    }
    let store = InteractionStore::from_pairs(users.len(), items.len(), pairs);
    Ok((store, users, items))
}

/// Sampled neighbour of an entity: (relation slot, neighbour entity).
pub type Edge = (u32, u32);

/// Entity/relation graph with inverse edges.
///
/// Relation slots: `r` for a forward edge, `r + R` for its inverse and `2R`
/// reserved for the self-loop given to isolated entities.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<(u32, u32, u32)>,
    adjacency: Vec<Vec<Edge>>,
}

impl KnowledgeGraph {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut kg = KnowledgeGraph::default();
        for (h, r, t) in triples {
            let h = kg.ensure_entity(h);
            let t = kg.ensure_entity(t);
            let r = kg.relations.intern(r);
            kg.triples.push((h, r, t));
        }
        kg.rebuild_adjacency();
        kg
    }

    fn rebuild_adjacency(&mut self) {
        let n_rel = self.relations.len() as u32;
        self.adjacency = vec![Vec::new(); self.entities.len()];
        for &(h, r, t) in &self.triples {
            self.adjacency[h as usize].push((r, t));
            self.adjacency[t as usize].push((r + n_rel, h));
        }
    }

    /// Id of `tok`, creating an isolated entity if unseen.
    pub fn ensure_entity(&mut self, tok: &str) -> u32 {
        let id = self.entities.intern(tok);
        if self.adjacency.len() < self.entities.len() {
            self.adjacency.push(Vec::new());
        }
        id
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Distinct base relations.
    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation embedding rows needed: forward, inverse, self-loop.
    pub fn relation_slots(&self) -> usize {
        2 * self.n_relations() + 1
    }

    pub fn self_loop(&self) -> u32 {
        2 * self.n_relations() as u32
    }

    pub fn neighbors(&self, e: u32) -> &[Edge] {
        &self.adjacency[e as usize]
    }

    pub fn degree(&self, e: u32) -> usize {
        self.adjacency[e as usize].len()
    }

    /// Fixed-size receptive field of `e`.
    ///
    /// Without replacement when the degree covers `size`; otherwise every
    /// neighbour appears once and the rest is drawn with replacement.
    /// Isolated entities get self-loops.
    pub fn sample_neighbors(&self, e: u32, size: usize, rng: &mut impl Rng) -> Vec<Edge> {
        let adj = self.neighbors(e);
        if adj.is_empty() {
            return vec![(self.self_loop(), e); size];
        }
        if adj.len() >= size {
            return index::sample(rng, adj.len(), size)
                .into_iter()
                .map(|i| adj[i])
                .collect();
        }
        let mut out = adj.to_vec();
        while out.len() < size {
            out.push(adj[rng.gen_range(0..adj.len())]);
        }
        out.shuffle(rng);
        out
    }
}

/// Reads tab-separated `head relation tail` triples.
pub fn load_kg(path: &Path) -> Result<KnowledgeGraph> {
    let mut raw = Vec::new();
    for (no, line) in lines(path)? {
        let line = line.map_err(io_err(path))?;
        if is_skippable(&line) {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split('\t').map(str::trim).collect();
        if f.len() != 3 || f.iter().any(|s| s.is_empty()) {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
            });
        }
        raw.push((f[0].to_string(), f[1].to_string(), f[2].to_string()));
    }
    Ok(KnowledgeGraph::from_triples(
        raw.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
    ))
}

/// Reads `item_token<TAB>entity_token` links.
pub fn load_item_links(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (no, line) in lines(path)? {
        let line = line.map_err(io_err(path))?;
        if is_skippable(&line) {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split('\t').map(str::trim).collect();
        if f.len() != 2 || f.iter().any(|s| s.is_empty()) {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: format!("expected item<TAB>entity, got {line:?}"),
            });
        }
        out.insert(f[0].to_string(), f[1].to_string());
    }
    Ok(out)
}

/// Result of a train/test split.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionStore,
    pub test: InteractionStore,
    /// Users whose interactions all landed in the test part.
    pub test_only_users: Vec<u32>,
}

/// Uniform per-interaction split; `round(ratio · N)` pairs go to train.
pub fn split(store: &InteractionStore, train_ratio: f64, seed: u64) -> Result<Split> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DataError::Invalid(format!(
            "train ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let mut pairs: Vec<(u32, u32)> = store.pairs().collect();
    pairs.shuffle(&mut rng_for(seed, stream::SPLIT, 0, 0));
    let n_train = (train_ratio * pairs.len() as f64).round() as usize;
    let (tr, te) = pairs.split_at(n_train);
    let train = InteractionStore::from_pairs(store.n_users, store.n_items, tr.iter().copied());
    let test = InteractionStore::from_pairs(store.n_users, store.n_items, te.iter().copied());
    let test_only_users = (0..store.n_users as u32)
        .filter(|&u| train.positives(u).is_empty() && !test.positives(u).is_empty())
        .collect();
    Ok(Split {
        train,
        test,
        test_only_users,
    })
}

/// One ranking example: user, positive item, negative item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Samples a positive uniformly from `u`'s train items and a negative
/// uniformly from the rest. `None` when `u` has no positives or no negatives.
pub fn sample_train_triple(train: &InteractionStore, u: u32, rng: &mut impl Rng) -> Option<Triple> {
    let pos = train.positives(u);
    if pos.is_empty() || pos.len() >= train.n_items {
        return None;
    }
    let i = pos[rng.gen_range(0..pos.len())];
    Some(Triple {
        user: u,
        pos: i,
        neg: sample_negative(train, u, rng),
    })
}

fn sample_negative(train: &InteractionStore, u: u32, rng: &mut impl Rng) -> u32 {
    loop {
        let j = rng.gen_range(0..train.n_items as u32);
        if !train.contains(u, j) {
            return j;
        }
    }
}

/// One pass over the train pairs, each with a fresh negative, shuffled.
pub fn epoch_triples(train: &InteractionStore, seed: u64, epoch: u64) -> Vec<Triple> {
    let mut rng = rng_for(seed, stream::TRIPLES, epoch, 0);
    let mut out: Vec<Triple> = train
        .pairs()
        .filter(|&(u, _)| train.positives(u).len() < train.n_items)
        .map(|(u, i)| Triple {
            user: u,
            pos: i,
            neg: sample_negative(train, u, &mut rng),
        })
        .collect();
    out.shuffle(&mut rng);
    out
}

/// Held-out positive plus sampled negatives for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
    /// Fewer eligible negatives than requested: drawn with replacement.
    pub with_replacement: bool,
}

impl Candidates {
    /// Positive first, then negatives.
    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.positive).chain(self.negatives.iter().copied())
    }
}

/// Test candidates for `u`: one random test positive and [`TEST_NEGATIVES`]
/// items `u` never interacted with, deterministic per `(u, seed)`.
pub fn sample_test_candidates(
    train: &InteractionStore,
    test: &InteractionStore,
    u: u32,
    seed: u64,
) -> Option<Candidates> {
    let tp = test.positives(u);
    if tp.is_empty() {
        return None;
    }
    let mut rng = rng_for(seed, stream::CANDIDATES, u as u64, 0);
    let positive = tp[rng.gen_range(0..tp.len())];
    let pool: Vec<u32> = (0..test.n_items as u32)
        .filter(|&v| !train.contains(u, v) && !test.contains(u, v))
        .collect();
    if pool.is_empty() {
        return None;
    }
    let (negatives, with_replacement) = if pool.len() >= TEST_NEGATIVES {
        let idx = index::sample(&mut rng, pool.len(), TEST_NEGATIVES);
        (idx.into_iter().map(|i| pool[i]).collect(), false)
    } else {
        let n: Vec<u32> = (0..TEST_NEGATIVES)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect();
        (n, true)
    };
    Some(Candidates {
        user: u,
        positive,
        negatives,
        with_replacement,
    })
}

/// Per-epoch receptive fields for every entity, `size` edges each.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    size: usize,
    edges: Vec<Edge>,
}

impl NeighborTable {
    pub fn build(kg: &KnowledgeGraph, size: usize, seed: u64, epoch: u64) -> Self {
        let mut edges = Vec::with_capacity(kg.n_entities() * size);
        for e in 0..kg.n_entities() as u32 {
            let mut rng = rng_for(seed, stream::NEIGHBORS, epoch, e as u64);
            edges.extend(kg.sample_neighbors(e, size, &mut rng));
        }
        NeighborTable { size, edges }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, e: u32) -> &[Edge] {
        let s = e as usize * self.size;
        &self.edges[s..s + self.size]
    }
}

/// Everything the model consumes, with dense ids throughout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: Vocab,
    pub items: Vocab,
    pub kg: KnowledgeGraph,
    /// Entity id of each item.
    pub item_entity: Vec<u32>,
    pub train: InteractionStore,
    pub test: InteractionStore,
    pub test_only_users: Vec<u32>,
}

impl Dataset {
    /// Links items into the KG and splits the interactions.
    ///
    /// Items are linked through `links` (item token → entity token) when
    /// given, else by using the item token as an entity token. Items absent
    /// from the KG become isolated entities.
    pub fn assemble(
        all: &InteractionStore,
        users: Vocab,
        items: Vocab,
        mut kg: KnowledgeGraph,
        links: Option<&HashMap<String, String>>,
        train_ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        if all.is_empty() {
            return Err(DataError::Invalid("no positive interactions".into()));
        }
        let mut item_entity = Vec::with_capacity(items.len());
        let mut seen = HashMap::new();
        for v in 0..items.len() as u32 {
            let tok = items.token(v);
            let ent_tok = links
                .and_then(|l| l.get(tok))
                .map_or(tok, String::as_str)
                .to_string();
            let e = kg.ensure_entity(&ent_tok);
            if let Some(prev) = seen.insert(e, v) {
                return Err(DataError::Invalid(format!(
                    "items {} and {} link to the same entity {ent_tok}",
                    items.token(prev),
                    tok
                )));
            }
            item_entity.push(e);
        }
        let s = split(all, train_ratio, seed)?;
        Ok(Dataset {
            users,
            items,
            kg,
            item_entity,
            train: s.train,
            test: s.test,
            test_only_users: s.test_only_users,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Writes splits, remap tables and the dense KG into `dir`.
    pub fn write(&self, dir: &Path, header: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let h = Some(header);
        let p = |n: &str| dir.join(n);
        self.train.write_tsv(&p("train.tsv"), h)?;
        self.test.write_tsv(&p("test.tsv"), h)?;
        self.users.write_tsv(&p("user_map.tsv"), h)?;
        self.items.write_tsv(&p("item_map.tsv"), h)?;
        self.kg.entities.write_tsv(&p("entity_map.tsv"), h)?;
        self.kg.relations.write_tsv(&p("relation_map.tsv"), h)?;

        let mut kg = format!("# {header}\n");
        for &(a, r, b) in &self.kg.triples {
            kg.push_str(&format!("{a}\t{r}\t{b}\n"));
        }
        fs::write(p("kg.tsv"), kg).map_err(io_err(&p("kg.tsv")))?;

        let mut links = format!("# {header}\n");
        for (v, e) in self.item_entity.iter().enumerate() {
            links.push_str(&format!("{v}\t{e}\n"));
        }
        fs::write(p("item_entity.tsv"), links).map_err(io_err(&p("item_entity.tsv")))?;

        Ok([
            "train.tsv",
            "test.tsv",
            "user_map.tsv",
            "item_map.tsv",
            "entity_map.tsv",
            "relation_map.tsv",
            "kg.tsv",
            "item_entity.tsv",
        ]
        .iter()
        .map(|n| p(n))
        .collect())
    }

    /// Reads a directory produced by [`Dataset::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let p = |n: &str| dir.join(n);
        let users = read_vocab(&p("user_map.tsv"))?;
        let items = read_vocab(&p("item_map.tsv"))?;
        let entities = read_vocab(&p("entity_map.tsv"))?;
        let relations = read_vocab(&p("relation_map.tsv"))?;
        let (nu, ni, ne, nr) = (users.len(), items.len(), entities.len(), relations.len());
        let train = InteractionStore::from_pairs(nu, ni, read_ids::<2>(&p("train.tsv"), [nu, ni])?.map(|[u, v]| (u, v)));
        let test = InteractionStore::from_pairs(nu, ni, read_ids::<2>(&p("test.tsv"), [nu, ni])?.map(|[u, v]| (u, v)));
        let triples: Vec<(u32, u32, u32)> = read_ids::<3>(&p("kg.tsv"), [ne, nr, ne])?
            .map(|[a, r, b]| (a, r, b))
            .collect();
        let mut item_entity = vec![u32::MAX; ni];
        for [v, e] in read_ids::<2>(&p("item_entity.tsv"), [ni, ne])? {
            item_entity[v as usize] = e;
        }
        if let Some(v) = item_entity.iter().position(|&e| e == u32::MAX) {
            return Err(DataError::Invalid(format!("item {v} has no entity link")));
        }
        let mut kg = KnowledgeGraph {
            entities,
            relations,
            triples,
            adjacency: Vec::new(),
        };
        kg.rebuild_adjacency();
        let test_only_users = (0..nu as u32)
            .filter(|&u| train.positives(u).is_empty() && !test.positives(u).is_empty())
            .collect();
        Ok(Dataset {
            users,
            items,
            kg,
            item_entity,
            train,
            test,
            test_only_users,
        })
    }
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let mut v = Vocab::default();
    for (no, line) in lines(path)? {
        let line = line.map_err(io_err(path))?;
        if is_skippable(&line) {
            continue;
        }
        let line = line.trim_end_matches(['\r', '\n']);
        let parsed = line
            .rsplit_once('\t')
            .and_then(|(tok, id)| id.parse::<usize>().ok().map(|id| (tok, id)));
        match parsed {
            Some((tok, id)) if id == v.len() => {
                v.intern(tok);
            }
            _ => {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: no,
                    msg: format!("expected token<TAB>{} got {line:?}", v.len()),
                })
            }
        }
    }
    Ok(v)
}

/// Rows of `N` tab-separated ids, each checked against its bound.
fn read_ids<const N: usize>(path: &Path, bounds: [usize; N]) -> Result<impl Iterator<Item = [u32; N]>> {
    let mut rows = Vec::new();
    for (no, line) in lines(path)? {
        let line = line.map_err(io_err(path))?;
        if is_skippable(&line) {
            continue;
        }
        let err = |msg: String| DataError::Parse {
            path: path.to_path_buf(),
            line: no,
            msg,
        };
        let f: Vec<&str> = line.trim().split('\t').collect();
        if f.len() != N {
            return Err(err(format!("expected {N} ids, got {line:?}")));
        }
        let mut row = [0u32; N];
        for i in 0..N {
            let x: u32 = f[i].parse().map_err(|_| err(format!("bad id {:?}", f[i])))?;
            if x as usize >= bounds[i] {
                return Err(err(format!("id {x} out of range {}", bounds[i])));
            }
            row[i] = x;
        }
        rows.push(row);
    }
    Ok(rows.into_iter())
}

/// Shape of a generated dataset with planted cluster structure.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Total entities including the items.
    pub entities: usize,
    pub clusters: usize,
    pub positives_per_user: usize,
    /// Fraction of a user's positives drawn from their own cluster.
    pub affinity: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 200,
            items: 300,
            entities: 500,
            clusters: 5,
            positives_per_user: 20,
            affinity: 0.85,
        }
    }
}

/// Raw generated records: `(user, item)` pairs and `(head, rel, tail)` triples
/// as string tokens, the same form the file loaders produce.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub interactions: Vec<(String, String)>,
    pub triples: Vec<(String, String, String)>,
}

/// Users and items share a cluster label; users mostly pick items of their
/// own cluster and items link to attribute entities of their cluster.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> SyntheticData {
    let mut rng = rng_for(seed, stream::SYNTH, 0, 0);
    let c = spec.clusters.max(1);
    let n_attr = spec.entities.saturating_sub(spec.items).max(c);
    let items_of = |k: usize| (0..spec.items).filter(move |i| i % c == k);
    let attrs_of = |k: usize| (0..n_attr).filter(move |a| a % c == k);

    let mut interactions = Vec::new();
    for u in 0..spec.users {
        let own: Vec<usize> = items_of(u % c).collect();
        let mut chosen = std::collections::BTreeSet::new();
        let target = spec.positives_per_user.min(spec.items);
        while chosen.len() < target {
            let v = if rng.gen_bool(spec.affinity) && !own.is_empty() {
                own[rng.gen_range(0..own.len())]
            } else {
                rng.gen_range(0..spec.items)
            };
            chosen.insert(v);
        }
        interactions.extend(chosen.into_iter().map(|v| (format!("u{u}"), format!("i{v}"))));
    }

    let mut triples = Vec::new();
    for i in 0..spec.items {
        let own: Vec<usize> = attrs_of(i % c).collect();
        for r in 0..2 {
            let a = own[rng.gen_range(0..own.len())];
            triples.push((format!("i{i}"), format!("attr{r}"), format!("a{a}")));
        }
        if rng.gen_bool(0.2) {
            let a = rng.gen_range(0..n_attr);
            triples.push((format!("i{i}"), "attr2".to_string(), format!("a{a}")));
        }
    }
    for a in 0..n_attr {
        let own: Vec<usize> = attrs_of(a % c).collect();
        let b = own[rng.gen_range(0..own.len())];
        if a != b {
            triples.push((format!("a{a}"), "related".to_string(), format!("a{b}")));
        }
    }
    SyntheticData {
        interactions,
        triples,
    }
}

impl SyntheticData {
    pub fn into_dataset(&self, train_ratio: f64, seed: u64) -> Result<Dataset> {
        let mut users = Vocab::default();
        let mut items = Vocab::default();
        let pairs: Vec<(u32, u32)> = self
            .interactions
            .iter()
            .map(|(u, v)| (users.intern(u), items.intern(v)))
            .collect();
        let all = InteractionStore::from_pairs(users.len(), items.len(), pairs);
        let kg = KnowledgeGraph::from_triples(
            self.triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        );
        Dataset::assemble(&all, users, items, kg, None, train_ratio, seed)
    }

    /// Writes `interactions.tsv` (user, item, rating 1) and `kg.tsv`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ip = dir.join("interactions.tsv");
        let kp = dir.join("kg.tsv");
        let mut f = fs::File::create(&ip).map_err(io_err(&ip))?;
        for (u, v) in &self.interactions {
            writeln!(f, "{u}\t{v}\t1").map_err(io_err(&ip))?;
        }
        let mut f = fs::File::create(&kp).map_err(io_err(&kp))?;
        for (h, r, t) in &self.triples {
            writeln!(f, "{h}\t{r}\t{t}").map_err(io_err(&kp))?;
        }
        Ok((ip, kp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn movielens_threshold_and_dedup() {
        let f = write_tmp("1::1193::5::978300760\n1::661::3::978302109\n1::1193::4::978300761\n2::661::4::1\n");
        let (s, users, items) = load_interactions(f.path(), &InteractionFormat::movielens()).unwrap();
        assert_eq!(s.len(), 2);
        let u1 = users.get("1").unwrap();
        assert_eq!(s.positives(u1), &[items.get("1193").unwrap()]);
        assert_eq!(users.len(), 2);
    }

    #[test]
    fn users_without_positives_are_dropped() {
        let f = write_tmp("1::10::2::0\n2::10::5::0\n");
        let (s, users, _) = load_interactions(f.path(), &InteractionFormat::movielens()).unwrap();
        assert_eq!(users.len(), 1);
        assert_eq!(users.get("1"), None);
        assert_eq!(s.n_users, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("1\t2\t1\nbroken\n");
        match load_interactions(f.path(), &InteractionFormat::tab()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("1\t2\tx\n");
        assert!(matches!(
            load_interactions(f.path(), &InteractionFormat::tab()),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn header_line_can_be_skipped() {
        let f = write_tmp("userID\tartistID\tweight\n2\t51\t13883\n2\t52\t11690\n");
        let mut fmt = InteractionFormat::tab();
        fmt.skip_header = true;
        let (s, _, _) = load_interactions(f.path(), &fmt).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn kg_inverse_edges() {
        let f = write_tmp("a\tr\tb\n");
        let kg = load_kg(f.path()).unwrap();
        let (a, b) = (kg.entities.get("a").unwrap(), kg.entities.get("b").unwrap());
        assert_eq!(kg.neighbors(a), &[(0, b)]);
        assert_eq!(kg.neighbors(b), &[(1, a)]);
        assert_eq!(kg.relation_slots(), 3);
        let f = write_tmp("a\tb\n");
        assert!(matches!(load_kg(f.path()), Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_kg_loads() {
        let f = write_tmp("");
        let kg = load_kg(f.path()).unwrap();
        assert_eq!(kg.n_entities(), 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let store = InteractionStore::from_pairs(2, 10, (0..10).map(|i| ((i % 2) as u32, i as u32)));
        let a = split(&store, 0.7, 3).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (7, 3));
        let b = split(&store, 0.7, 3).unwrap();
        assert_eq!(a.train, b.train);
        for (u, v) in a.test.pairs() {
            assert!(!a.train.contains(u, v));
        }
        assert!(split(&store, 1.0, 3).is_err());
        assert!(split(&store, 0.0, 3).is_err());
    }

    #[test]
    fn split_flags_users_without_train() {
        let store = InteractionStore::from_pairs(3, 4, [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (2, 1)]);
        let flagged_somewhere = (0..50).any(|seed| !split(&store, 0.5, seed).unwrap().test_only_users.is_empty());
        assert!(flagged_somewhere);
    }

    fn star(degree: usize) -> KnowledgeGraph {
        let owned: Vec<(String, String, String)> = (0..degree)
            .map(|i| ("c".to_string(), format!("r{i}"), format!("n{i}")))
            .collect();
        KnowledgeGraph::from_triples(owned.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
    }

    #[test]
    fn full_degree_sample_is_a_permutation() {
        let kg = star(8);
        let c = kg.entities.get("c").unwrap();
        let mut s = kg.sample_neighbors(c, 8, &mut rng_for(1, 0, 0, 0));
        let mut all = kg.neighbors(c).to_vec();
        s.sort();
        all.sort();
        assert_eq!(s, all);
    }

    #[test]
    fn low_degree_sample_covers_every_neighbor() {
        let kg = star(2);
        let c = kg.entities.get("c").unwrap();
        for seed in 0..200 {
            let s = kg.sample_neighbors(c, 4, &mut rng_for(seed, 0, 0, 0));
            assert_eq!(s.len(), 4);
            for n in kg.neighbors(c) {
                assert!(s.contains(n));
            }
        }
    }

    #[test]
    fn isolated_entity_gets_self_loops() {
        let mut kg = star(1);
        let z = kg.ensure_entity("lonely");
        let s = kg.sample_neighbors(z, 3, &mut rng_for(0, 0, 0, 0));
        assert_eq!(s, vec![(kg.self_loop(), z); 3]);
    }

    #[test]
    fn neighbor_table_reproducible_and_resampled() {
        let kg = star(20);
        let a = NeighborTable::build(&kg, 4, 9, 0);
        let b = NeighborTable::build(&kg, 4, 9, 0);
        let c = NeighborTable::build(&kg, 4, 9, 1);
        let e = kg.entities.get("c").unwrap();
        assert_eq!(a.get(e), b.get(e));
        assert_ne!(a.get(e), c.get(e));
    }

    #[test]
    fn train_triples_never_pick_positives() {
        let store = InteractionStore::from_pairs(2, 6, [(0, 1), (0, 3), (1, 2)]);
        let mut rng = rng_for(5, 0, 0, 0);
        for _ in 0..10_000 {
            let t = sample_train_triple(&store, 0, &mut rng).unwrap();
            assert!(store.contains(0, t.pos));
            assert!(!store.contains(0, t.neg));
        }
        let single = sample_train_triple(&store, 1, &mut rng).unwrap();
        assert_eq!(single.pos, 2);
        let full = InteractionStore::from_pairs(1, 2, [(0, 0), (0, 1)]);
        assert_eq!(sample_train_triple(&full, 0, &mut rng), None);
        assert_eq!(epoch_triples(&store, 1, 0), epoch_triples(&store, 1, 0));
    }

    #[test]
    fn test_candidates_protocol() {
        let train = InteractionStore::from_pairs(2, 300, [(0, 0), (0, 1), (1, 5)]);
        let test = InteractionStore::from_pairs(2, 300, [(0, 2), (0, 3), (1, 7)]);
        let c = sample_test_candidates(&train, &test, 0, 11).unwrap();
        assert_eq!(c.items().count(), 101);
        assert!(test.contains(0, c.positive));
        for &n in &c.negatives {
            assert!(!train.contains(0, n) && !test.contains(0, n));
        }
        assert!(!c.with_replacement);
        assert_eq!(c, sample_test_candidates(&train, &test, 0, 11).unwrap());
        let d = sample_test_candidates(&train, &test, 1, 11).unwrap();
        assert_ne!(c.negatives, d.negatives);
    }

    #[test]
    fn small_catalog_samples_with_replacement() {
        let train = InteractionStore::from_pairs(1, 20, [(0, 0)]);
        let test = InteractionStore::from_pairs(1, 20, [(0, 1)]);
        let c = sample_test_candidates(&train, &test, 0, 0).unwrap();
        assert!(c.with_replacement);
        assert_eq!(c.negatives.len(), TEST_NEGATIVES);
    }

    #[test]
    fn synthetic_dataset_shape() {
        let syn = synthesize(&SyntheticSpec::default(), 7);
        let ds = syn.into_dataset(0.7, 7).unwrap();
        assert_eq!(ds.n_users(), 200);
        assert_eq!(ds.n_items(), 300);
        assert!(ds.kg.n_entities() <= 500 && ds.kg.n_entities() > 400);
        let tot = ds.train.len() + ds.test.len();
        assert_eq!(ds.train.len(), (0.7 * tot as f64).round() as usize);
        let mut seen = std::collections::HashSet::new();
        for &e in &ds.item_entity {
            assert!(seen.insert(e));
        }
    }

    #[test]
    fn duplicate_item_links_rejected() {
        let all = InteractionStore::from_pairs(1, 2, [(0, 0), (0, 1)]);
        let mut users = Vocab::default();
        users.intern("u");
        let mut items = Vocab::default();
        items.intern("x");
        items.intern("y");
        let links: HashMap<String, String> =
            [("x", "e"), ("y", "e")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let r = Dataset::assemble(&all, users, items, KnowledgeGraph::default(), Some(&links), 0.5, 0);
        assert!(r.is_err());
    }

    #[test]
    fn prepared_dir_round_trip() {
        let d = synthesize(&SyntheticSpec { users: 20, items: 30, entities: 50, ..Default::default() }, 1)
            .into_dataset(0.7, 1)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path(), "h").unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.train, d.train);
        assert_eq!(back.test, d.test);
        assert_eq!(back.users, d.users);
        assert_eq!(back.items, d.items);
        assert_eq!(back.kg.entities, d.kg.entities);
        assert_eq!(back.kg.triples, d.kg.triples);
        assert_eq!(back.item_entity, d.item_entity);
        assert_eq!(back.test_only_users, d.test_only_users);
        for e in 0..d.kg.n_entities() as u32 {
            assert_eq!(back.kg.neighbors(e), d.kg.neighbors(e));
        }
    }

    #[test]
    fn tertiles_partition_by_popularity() {
        let pairs = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2), (0, 3)];
        let store = InteractionStore::from_pairs(3, 7, pairs);
        let t = popularity_tertiles(&store);
        assert_eq!(t, vec![0, 0, 0, 1, 1, 2, 2]);
        let counts: Vec<usize> = (0..3).map(|k| t.iter().filter(|&&x| x == k).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }
}
