//! Sequence-level stratified splitting with label-balanced interleaving.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{DatasetError, SampleRecord};
use crate::rng::stream;
use crate::tensor::{HeartState, SplitHint};

const SPLITS: [SplitHint; 3] = [SplitHint::Train, SplitHint::Val, SplitHint::Test];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub fractions: [f64; 3],
}

impl DatasetSplit {
    pub fn part(&self, s: SplitHint) -> &[SampleRecord] {
        match s {
            SplitHint::Train => &self.train,
            SplitHint::Val => &self.val,
            SplitHint::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What the splitter needs to know about a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub id: String,
    pub heart_state: HeartState,
    pub label_months: f64,
}

fn check_fractions(f: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(f));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items to `fractions`.
fn targets(n: usize, f: [f64; 3]) -> [usize; 3] {
    let raw = f.map(|x| x * n as f64);
    let mut t = raw.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = n - t.iter().sum::<usize>();
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        t[j] += 1;
        left -= 1;
    }
    t
}

/// Assigns every sequence to train/val/test. Per heart state, sequences are
/// ordered by failure age, shuffled within consecutive age blocks (seeded),
/// then dealt to the split furthest behind its pro-rata target, which gives
/// exact largest-remainder counts and similar age distributions per split.
pub fn assign_splits(
    seqs: &[SequenceMeta],
    fractions: [f64; 3],
    seed: u64,
) -> Result<BTreeMap<String, SplitHint>, DatasetError> {
    check_fractions(fractions)?;
    if seqs.is_empty() {
        return Err(DatasetError::NoSequences);
    }
    let mut by_state: BTreeMap<&HeartState, Vec<&SequenceMeta>> = BTreeMap::new();
    for s in seqs {
        by_state.entry(&s.heart_state).or_default().push(s);
    }
    let smallest = fractions.iter().copied().filter(|&f| f > 0.0).fold(1.0, f64::min);
    let block = ((1.0 / smallest).round() as usize).max(1);
    let mut out = BTreeMap::new();
    for (state, mut group) in by_state {
        group.sort_by(|a, b| a.label_months.total_cmp(&b.label_months).then(a.id.cmp(&b.id)));
        let mut rng = stream(seed, state.as_str(), "split");
        for chunk in group.chunks_mut(block) {
            chunk.shuffle(&mut rng);
        }
        let n = group.len();
        let want = targets(n, fractions);
        let mut have = [0usize; 3];
        for (i, s) in group.iter().enumerate() {
            let due = |j: usize| want[j] as f64 * (i + 1) as f64 / n as f64 - have[j] as f64;
            let j = (0..3)
                .filter(|&j| have[j] < want[j])
                .max_by(|&a, &b| due(a).total_cmp(&due(b)).then(b.cmp(&a)))
                .expect("capacity remains");
            have[j] += 1;
            out.insert(s.id.clone(), SPLITS[j]);
        }
    }
    Ok(out)
}

/// Split assignment honoring explicit hints: hinted sequences keep their
/// hint and the remaining ones are dealt by [`assign_splits`].
pub fn assign_splits_with_hints(
    seqs: &[(SequenceMeta, Option<SplitHint>)],
    fractions: [f64; 3],
    seed: u64,
) -> Result<BTreeMap<String, SplitHint>, DatasetError> {
    check_fractions(fractions)?;
    if seqs.is_empty() {
        return Err(DatasetError::NoSequences);
    }
    let free: Vec<SequenceMeta> = seqs.iter().filter(|(_, h)| h.is_none()).map(|(m, _)| m.clone()).collect();
    let mut out = if free.is_empty() { BTreeMap::new() } else { assign_splits(&free, fractions, seed)? };
    for (m, h) in seqs {
        if let Some(h) = h {
            out.insert(m.id.clone(), *h);
        }
    }
    Ok(out)
}

/// Partitions records by sequence according to `assignment`; every record's
/// sequence must be assigned.
pub fn partition(
    records: Vec<SampleRecord>,
    assignment: &BTreeMap<String, SplitHint>,
    fractions: [f64; 3],
) -> Result<DatasetSplit, DatasetError> {
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new(), fractions };
    for r in records {
        match assignment.get(&r.sequence_id) {
            Some(SplitHint::Train) => split.train.push(r),
            Some(SplitHint::Val) => split.val.push(r),
            Some(SplitHint::Test) => split.test.push(r),
            None => return Err(DatasetError::Unassigned(r.sequence_id)),
        }
    }
    Ok(split)
}

/// Partitions records by sequence according to [`assign_splits`].
pub fn split_dataset(records: Vec<SampleRecord>, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit, DatasetError> {
    let mut metas: BTreeMap<&str, SequenceMeta> = BTreeMap::new();
    for r in &records {
        metas.entry(&r.sequence_id).or_insert_with(|| SequenceMeta {
            id: r.sequence_id.clone(),
            heart_state: r.heart_state.clone(),
            label_months: r.label_months,
        });
    }
    let metas: Vec<SequenceMeta> = metas.into_values().collect();
    let assignment = assign_splits(&metas, fractions, seed)?;
    partition(records, &assignment, fractions)
}
