//! The two-level hierarchical search space: block-based DAG architectures,
//! their fixed-width vector encoding, sampling, mutation, and presets.
//!
//! An [`Architecture`] is an ordered list of exactly [`N_BLOCKS`] block
//! specs.  Edges only point backward in index, so every architecture is a
//! DAG by construction.  An implicit final linear block collects every
//! feature group and block output left untouched by the intermediate
//! blocks; it carries no searchable state and is materialized by the model
//! builder, not here.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of searchable intermediate blocks.
pub const N_BLOCKS: usize = 7;

/// Width choices for the MLP block.
pub const UNIT_CHOICES: [u32; 6] = [32, 64, 128, 256, 512, 1024];

/// Encoded slots per block: 4 (type one-hot) + 4 (raw-input one-hot)
/// + 6 (predecessor multi-hot) + 1 (units ordinal).
pub const SLOTS_PER_BLOCK: usize = 15;

/// Total encoded vector length.
pub const VEC_LEN: usize = N_BLOCKS * SLOTS_PER_BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Empty,
    Mlp,
    Fm,
    Dp,
}

impl BlockType {
    fn one_hot_index(self) -> usize {
        match self {
            BlockType::Empty => 0,
            BlockType::Mlp => 1,
            BlockType::Fm => 2,
            BlockType::Dp => 3,
        }
    }

    fn from_one_hot_index(i: usize) -> Self {
        match i {
            0 => BlockType::Empty,
            1 => BlockType::Mlp,
            2 => BlockType::Fm,
            _ => BlockType::Dp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawInput {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "dense")]
    DenseOnly,
    #[serde(rename = "sparse")]
    SparseOnly,
    #[serde(rename = "both")]
    Both,
}

impl RawInput {
    fn one_hot_index(self) -> usize {
        match self {
            RawInput::None => 0,
            RawInput::DenseOnly => 1,
            RawInput::SparseOnly => 2,
            RawInput::Both => 3,
        }
    }

    fn from_one_hot_index(i: usize) -> Self {
        match i {
            0 => RawInput::None,
            1 => RawInput::DenseOnly,
            2 => RawInput::SparseOnly,
            _ => RawInput::Both,
        }
    }

    pub fn takes_dense(self) -> bool {
        matches!(self, RawInput::DenseOnly | RawInput::Both)
    }

    pub fn takes_sparse(self) -> bool {
        matches!(self, RawInput::SparseOnly | RawInput::Both)
    }
}

const NON_NONE_RAW: [RawInput; 3] = [RawInput::DenseOnly, RawInput::SparseOnly, RawInput::Both];
const ALL_RAW: [RawInput; 4] = [
    RawInput::None,
    RawInput::DenseOnly,
    RawInput::SparseOnly,
    RawInput::Both,
];
const NON_EMPTY_TYPES: [BlockType; 3] = [BlockType::Mlp, BlockType::Fm, BlockType::Dp];

/// One intermediate block. `predecessors` holds 1-based indices of earlier
/// blocks; `mlp_units` is present exactly when `block_type` is `Mlp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(rename = "type")]
    pub block_type: BlockType,
    #[serde(rename = "raw")]
    pub raw_input: RawInput,
    #[serde(rename = "preds", default)]
    pub predecessors: BTreeSet<usize>,
    #[serde(rename = "units", default, skip_serializing_if = "Option::is_none")]
    pub mlp_units: Option<u32>,
}

impl BlockSpec {
    pub fn empty() -> Self {
        BlockSpec {
            block_type: BlockType::Empty,
            raw_input: RawInput::None,
            predecessors: BTreeSet::new(),
            mlp_units: None,
        }
    }

    pub fn mlp(units: u32, raw: RawInput, preds: &[usize]) -> Self {
        BlockSpec {
            block_type: BlockType::Mlp,
            raw_input: raw,
            predecessors: preds.iter().copied().collect(),
            mlp_units: Some(units),
        }
    }

    pub fn fm(raw: RawInput, preds: &[usize]) -> Self {
        BlockSpec {
            block_type: BlockType::Fm,
            raw_input: raw,
            predecessors: preds.iter().copied().collect(),
            mlp_units: None,
        }
    }

    pub fn dp(raw: RawInput, preds: &[usize]) -> Self {
        BlockSpec {
            block_type: BlockType::Dp,
            raw_input: raw,
            predecessors: preds.iter().copied().collect(),
            mlp_units: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.block_type == BlockType::Empty
    }
}

/// A point in the search space: exactly [`N_BLOCKS`] blocks in topological
/// order plus the implicit final linear block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub blocks: Vec<BlockSpec>,
}

impl Architecture {
    /// Wraps a block list, requiring exactly [`N_BLOCKS`] entries. Deeper
    /// structural checks are the job of [`validate`].
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self> {
        if blocks.len() != N_BLOCKS {
            return Err(Error::InvalidArchitecture(vec![format!(
                "expected {} blocks, got {}",
                N_BLOCKS,
                blocks.len()
            )]));
        }
        Ok(Architecture { blocks })
    }

    /// Pads a shorter prefix of blocks with empty blocks.
    pub fn from_prefix(mut blocks: Vec<BlockSpec>) -> Result<Self> {
        if blocks.len() > N_BLOCKS {
            return Err(Error::InvalidArchitecture(vec![format!(
                "{} blocks exceed the {}-slot space",
                blocks.len(),
                N_BLOCKS
            )]));
        }
        while blocks.len() < N_BLOCKS {
            blocks.push(BlockSpec::empty());
        }
        Ok(Architecture { blocks })
    }

    /// 1-based accessor matching the index convention used in predecessors.
    pub fn block(&self, index: usize) -> &BlockSpec {
        &self.blocks[index - 1]
    }

    pub fn n_nonempty(&self) -> usize {
        self.blocks.iter().filter(|b| !b.is_empty()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(s)?;
        if arch.blocks.len() != N_BLOCKS {
            return Err(Error::InvalidArchitecture(vec![format!(
                "expected {} blocks, got {}",
                N_BLOCKS,
                arch.blocks.len()
            )]));
        }
        Ok(arch)
    }

    /// Empty slots dropped and indices compacted, preserving relative
    /// order. Two architectures that differ only in empty-slot positions
    /// share a canonical form.
    pub fn canonical_form(&self) -> Architecture {
        let mut remap = vec![0usize; N_BLOCKS + 1];
        let mut next = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if !b.is_empty() {
                remap[i + 1] = next;
                next += 1;
            }
        }
        let mut blocks = Vec::with_capacity(N_BLOCKS);
        for b in &self.blocks {
            if b.is_empty() {
                continue;
            }
            let mut nb = b.clone();
            nb.predecessors = b.predecessors.iter().map(|&p| remap[p]).collect();
            blocks.push(nb);
        }
        Architecture::from_prefix(blocks).expect("canonical form fits the slot count")
    }
}

/// Fixed-width numeric encoding of an architecture: per block,
/// type one-hot (4) + raw-input one-hot (4) + predecessor multi-hot (6)
/// + units ordinal (1, zero when not an MLP).
#[derive(Debug, Clone, PartialEq)]
pub struct ArchVector {
    values: Vec<f64>,
}

impl ArchVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Human-readable name of one encoded coordinate, in the `id_type` style
/// used for importance reports: `"3_mlp"`, `"3_raw_dense"`, `"3_pred_1"`,
/// `"3_units"`.
pub fn coordinate_label(index: usize) -> String {
    let block = index / SLOTS_PER_BLOCK + 1;
    match index % SLOTS_PER_BLOCK {
        0 => format!("{block}_empty"),
        1 => format!("{block}_mlp"),
        2 => format!("{block}_fm"),
        3 => format!("{block}_dp"),
        4 => format!("{block}_raw_none"),
        5 => format!("{block}_raw_dense"),
        6 => format!("{block}_raw_sparse"),
        7 => format!("{block}_raw_both"),
        s @ 8..=13 => format!("{block}_pred_{}", s - 7),
        _ => format!("{block}_units"),
    }
}

/// Structural rule check. Violations are data, not errors: the returned
/// list is empty exactly when the architecture is valid.
pub fn validate(arch: &Architecture) -> Vec<String> {
    let mut violations = Vec::new();
    if arch.blocks.iter().all(|b| b.is_empty()) {
        violations.push("no non-empty block".to_string());
    }
    for (idx0, block) in arch.blocks.iter().enumerate() {
        let index = idx0 + 1;
        for &p in &block.predecessors {
            if p == 0 || p >= index {
                violations.push(format!("forward edge {p}->{index}"));
            } else if arch.blocks[p - 1].is_empty() {
                violations.push(format!("edge {p}->{index} into empty block"));
            }
        }
        if block.is_empty() {
            if block.raw_input != RawInput::None {
                violations.push(format!("empty block {index} declares raw input"));
            }
            if !block.predecessors.is_empty() {
                violations.push(format!("empty block {index} declares predecessors"));
            }
            if block.mlp_units.is_some() {
                violations.push(format!("empty block {index} declares units"));
            }
        } else {
            if block.raw_input == RawInput::None && block.predecessors.is_empty() {
                violations.push(format!("block {index} has no inputs"));
            }
            match (block.block_type, block.mlp_units) {
                (BlockType::Mlp, Some(u)) => {
                    if !UNIT_CHOICES.contains(&u) {
                        violations.push(format!("block {index} has units {u} outside the unit set"));
                    }
                }
                (BlockType::Mlp, None) => {
                    violations.push(format!("mlp block {index} missing units"));
                }
                (_, Some(_)) => {
                    violations.push(format!("non-mlp block {index} declares units"));
                }
                (_, None) => {}
            }
        }
    }
    violations
}

/// Encodes a valid architecture into its fixed-width vector.
pub fn encode(arch: &Architecture) -> Result<ArchVector> {
    let violations = validate(arch);
    if !violations.is_empty() {
        return Err(Error::InvalidArchitecture(violations));
    }
    let mut values = vec![0.0; VEC_LEN];
    for (idx0, block) in arch.blocks.iter().enumerate() {
        let base = idx0 * SLOTS_PER_BLOCK;
        values[base + block.block_type.one_hot_index()] = 1.0;
        values[base + 4 + block.raw_input.one_hot_index()] = 1.0;
        for &p in &block.predecessors {
            values[base + 8 + (p - 1)] = 1.0;
        }
        if let Some(u) = block.mlp_units {
            let ordinal = UNIT_CHOICES.iter().position(|&c| c == u).unwrap() + 1;
            values[base + 14] = ordinal as f64;
        }
    }
    Ok(ArchVector { values })
}

fn read_one_hot(segment: &[f64], what: &str, block: usize) -> Result<usize> {
    let mut hit = None;
    for (i, &v) in segment.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if v != 1.0 || hit.is_some() {
            return Err(Error::MalformedVector(format!(
                "block {block}: {what} segment is not one-hot"
            )));
        }
        hit = Some(i);
    }
    hit.ok_or_else(|| {
        Error::MalformedVector(format!("block {block}: {what} segment is not one-hot"))
    })
}

/// Inverse of [`encode`] on its image. Rejects malformed vectors;
/// structural violations expressible in the decoded architecture (such as
/// an edge into an empty block) are left to [`validate`].
pub fn decode(values: &[f64]) -> Result<Architecture> {
    if values.len() != VEC_LEN {
        return Err(Error::MalformedVector(format!(
            "expected length {VEC_LEN}, got {}",
            values.len()
        )));
    }
    let mut blocks = Vec::with_capacity(N_BLOCKS);
    for idx0 in 0..N_BLOCKS {
        let index = idx0 + 1;
        let base = idx0 * SLOTS_PER_BLOCK;
        let block_type =
            BlockType::from_one_hot_index(read_one_hot(&values[base..base + 4], "type", index)?);
        let raw_input =
            RawInput::from_one_hot_index(read_one_hot(&values[base + 4..base + 8], "raw", index)?);
        let mut predecessors = BTreeSet::new();
        for j in 0..6 {
            let v = values[base + 8 + j];
            if v == 0.0 {
                continue;
            }
            if v != 1.0 {
                return Err(Error::MalformedVector(format!(
                    "block {index}: predecessor slot {} is not 0/1",
                    j + 1
                )));
            }
            if j + 1 >= index {
                return Err(Error::MalformedVector(format!(
                    "block {index}: predecessor bit {} references a nonexistent block",
                    j + 1
                )));
            }
            predecessors.insert(j + 1);
        }
        let units_raw = values[base + 14];
        if units_raw.fract() != 0.0 || !(0.0..=6.0).contains(&units_raw) {
            return Err(Error::MalformedVector(format!(
                "block {index}: units index {units_raw} outside 0..=6"
            )));
        }
        let mlp_units = if units_raw == 0.0 {
            None
        } else {
            Some(UNIT_CHOICES[units_raw as usize - 1])
        };
        match (block_type, mlp_units) {
            (BlockType::Mlp, None) => {
                return Err(Error::MalformedVector(format!(
                    "block {index}: mlp block with zero units index"
                )))
            }
            (BlockType::Mlp, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::MalformedVector(format!(
                    "block {index}: units index set on a non-mlp block"
                )))
            }
            (_, None) => {}
        }
        blocks.push(BlockSpec {
            block_type,
            raw_input,
            predecessors,
            mlp_units,
        });
    }
    Ok(Architecture { blocks })
}

/// Sampling restrictions for desk-scale runs. The defaults cover the full
/// space; narrowing mirrors the protocol of restricting block types or MLP
/// widths for cheap analysis runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceOptions {
    pub allow_empty: bool,
    pub allowed_types: Vec<BlockType>,
    pub unit_choices: Vec<u32>,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        SpaceOptions {
            allow_empty: true,
            allowed_types: NON_EMPTY_TYPES.to_vec(),
            unit_choices: UNIT_CHOICES.to_vec(),
        }
    }
}

impl SpaceOptions {
    pub fn mlp_only() -> Self {
        SpaceOptions {
            allowed_types: vec![BlockType::Mlp],
            ..SpaceOptions::default()
        }
    }

    fn sample_units<R: Rng>(&self, rng: &mut R) -> u32 {
        *self.unit_choices.choose(rng).expect("unit choices nonempty")
    }
}

/// Drops edges that point forward or into empty blocks, then resamples the
/// raw input of any non-empty block left without inputs.
fn repair<R: Rng>(blocks: &mut [BlockSpec], rng: &mut R) {
    let emptiness: Vec<bool> = blocks.iter().map(|b| b.is_empty()).collect();
    for (idx0, block) in blocks.iter_mut().enumerate() {
        let index = idx0 + 1;
        block
            .predecessors
            .retain(|&p| p >= 1 && p < index && !emptiness[p - 1]);
        if !block.is_empty() && block.raw_input == RawInput::None && block.predecessors.is_empty() {
            block.raw_input = *NON_NONE_RAW.choose(rng).unwrap();
        }
    }
}

/// Uniformly samples a valid architecture. Each block's type, raw input,
/// predecessor set, and units are drawn uniformly, then a repair pass
/// enforces validity; with `allow_empty` disabled no block is empty.
pub fn random_arch<R: Rng>(rng: &mut R, allow_empty: bool) -> Architecture {
    let opts = SpaceOptions {
        allow_empty,
        ..SpaceOptions::default()
    };
    random_arch_with(rng, &opts)
}

pub fn random_arch_with<R: Rng>(rng: &mut R, opts: &SpaceOptions) -> Architecture {
    let mut blocks = Vec::with_capacity(N_BLOCKS);
    for index in 1..=N_BLOCKS {
        let n_types = opts.allowed_types.len() + usize::from(opts.allow_empty);
        let pick = rng.gen_range(0..n_types);
        let block_type = if pick < opts.allowed_types.len() {
            opts.allowed_types[pick]
        } else {
            BlockType::Empty
        };
        if block_type == BlockType::Empty {
            blocks.push(BlockSpec::empty());
            continue;
        }
        let mlp_units = (block_type == BlockType::Mlp).then(|| opts.sample_units(rng));
        let raw_input = *ALL_RAW.choose(rng).unwrap();
        let mut predecessors = BTreeSet::new();
        for p in 1..index {
            if rng.gen_bool(0.5) {
                predecessors.insert(p);
            }
        }
        blocks.push(BlockSpec {
            block_type,
            raw_input,
            predecessors,
            mlp_units,
        });
    }
    if blocks.iter().all(|b| b.is_empty()) {
        let slot = rng.gen_range(0..N_BLOCKS);
        let block_type = *opts.allowed_types.choose(rng).unwrap();
        blocks[slot] = BlockSpec {
            block_type,
            raw_input: *NON_NONE_RAW.choose(rng).unwrap(),
            predecessors: BTreeSet::new(),
            mlp_units: (block_type == BlockType::Mlp).then(|| opts.sample_units(rng)),
        };
    }
    repair(&mut blocks, rng);
    let arch = Architecture { blocks };
    debug_assert!(validate(&arch).is_empty());
    arch
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MutationOp {
    ResampleType,
    ResampleRaw,
    TogglePredecessor,
    ResampleUnits,
    SwapEmpty,
}

/// Applies one uniformly chosen mutation operator followed by repair.
/// The result is always valid and differs from the input; retries draw a
/// fresh operator each time and give up after 50 attempts.
pub fn mutate<R: Rng>(arch: &Architecture, rng: &mut R) -> Result<Architecture> {
    mutate_with(arch, rng, &SpaceOptions::default())
}

pub fn mutate_with<R: Rng>(
    arch: &Architecture,
    rng: &mut R,
    opts: &SpaceOptions,
) -> Result<Architecture> {
    debug_assert!(validate(arch).is_empty());
    const MAX_ATTEMPTS: usize = 50;
    for _ in 0..MAX_ATTEMPTS {
        let candidate = mutate_once(arch, rng, opts);
        if let Some(candidate) = candidate {
            if validate(&candidate).is_empty() && candidate != *arch {
                return Ok(candidate);
            }
        }
    }
    Err(Error::MutationExhausted {
        attempts: MAX_ATTEMPTS,
    })
}

fn mutate_once<R: Rng>(
    arch: &Architecture,
    rng: &mut R,
    opts: &SpaceOptions,
) -> Option<Architecture> {
    let nonempty: Vec<usize> = (1..=N_BLOCKS)
        .filter(|&i| !arch.block(i).is_empty())
        .collect();
    let empty: Vec<usize> = (1..=N_BLOCKS)
        .filter(|&i| arch.block(i).is_empty())
        .collect();
    let mlp: Vec<usize> = (1..=N_BLOCKS)
        .filter(|&i| arch.block(i).block_type == BlockType::Mlp)
        .collect();
    // Predecessor toggles connect two non-empty blocks.
    let edge_pairs: Vec<(usize, usize)> = nonempty
        .iter()
        .flat_map(|&i| nonempty.iter().filter(move |&&j| j < i).map(move |&j| (i, j)))
        .collect();

    let mut ops = vec![MutationOp::ResampleType, MutationOp::ResampleRaw];
    if !edge_pairs.is_empty() {
        ops.push(MutationOp::TogglePredecessor);
    }
    if mlp.iter().any(|_| opts.unit_choices.len() > 1) {
        ops.push(MutationOp::ResampleUnits);
    }
    if !empty.is_empty() && !nonempty.is_empty() {
        ops.push(MutationOp::SwapEmpty);
    }

    let mut blocks = arch.blocks.clone();
    match *ops.choose(rng).unwrap() {
        MutationOp::ResampleType => {
            let index = rng.gen_range(1..=N_BLOCKS);
            let current = blocks[index - 1].block_type;
            let mut targets: Vec<BlockType> = opts
                .allowed_types
                .iter()
                .copied()
                .filter(|&t| t != current)
                .collect();
            // Emptying the only non-empty block is never a legal move.
            if opts.allow_empty && current != BlockType::Empty && nonempty.len() > 1 {
                targets.push(BlockType::Empty);
            }
            let target = *targets.choose(rng)?;
            let block = &mut blocks[index - 1];
            if target == BlockType::Empty {
                *block = BlockSpec::empty();
            } else if current == BlockType::Empty {
                *block = BlockSpec {
                    block_type: target,
                    raw_input: *NON_NONE_RAW.choose(rng).unwrap(),
                    predecessors: BTreeSet::new(),
                    mlp_units: (target == BlockType::Mlp).then(|| opts.sample_units(rng)),
                };
            } else {
                block.block_type = target;
                block.mlp_units = (target == BlockType::Mlp).then(|| opts.sample_units(rng));
            }
        }
        MutationOp::ResampleRaw => {
            let &index = nonempty.choose(rng)?;
            let current = blocks[index - 1].raw_input;
            let choices: Vec<RawInput> =
                ALL_RAW.iter().copied().filter(|&r| r != current).collect();
            blocks[index - 1].raw_input = *choices.choose(rng).unwrap();
        }
        MutationOp::TogglePredecessor => {
            let &(i, j) = edge_pairs.choose(rng)?;
            let preds = &mut blocks[i - 1].predecessors;
            if !preds.remove(&j) {
                preds.insert(j);
            }
        }
        MutationOp::ResampleUnits => {
            let &index = mlp.choose(rng)?;
            let current = blocks[index - 1].mlp_units.unwrap();
            let choices: Vec<u32> = opts
                .unit_choices
                .iter()
                .copied()
                .filter(|&u| u != current)
                .collect();
            blocks[index - 1].mlp_units = Some(*choices.choose(rng)?);
        }
        MutationOp::SwapEmpty => {
            let &e = empty.choose(rng)?;
            let &n = nonempty.choose(rng)?;
            blocks.swap(e - 1, n - 1);
        }
    }
    repair(&mut blocks, rng);
    Some(Architecture { blocks })
}

/// Collects up to `n` pairwise-distinct single-mutation neighbors, none
/// equal to the parent, within `50 * n` mutation attempts.
pub fn unique_neighbors<R: Rng>(
    arch: &Architecture,
    n: usize,
    rng: &mut R,
    opts: &SpaceOptions,
) -> Vec<Architecture> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let budget = n.saturating_mul(50);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        if let Ok(neighbor) = mutate_with(arch, rng, opts) {
            if seen.insert(neighbor.clone()) {
                out.push(neighbor);
            }
        }
    }
    out
}

/// Exactly `n` unique neighbors or a [`Error::NeighborsExhausted`].
pub fn neighbors<R: Rng>(arch: &Architecture, n: usize, rng: &mut R) -> Result<Vec<Architecture>> {
    let out = unique_neighbors(arch, n, rng, &SpaceOptions::default());
    if out.len() < n {
        return Err(Error::NeighborsExhausted {
            found: out.len(),
            requested: n,
        });
    }
    Ok(out)
}

/// Exact count of distinct valid architectures over the first `max_blocks`
/// slots, by dynamic programming over (position, non-empty prefix count).
/// A non-empty block with `k` non-empty predecessors available has
/// 8 type/unit choices (6 MLP widths + FM + DP) and `4 * 2^k - 1` valid
/// raw/predecessor combinations (raw none with no edges is excluded).
pub fn space_size(max_blocks: usize, allow_empty: bool) -> u128 {
    assert!(
        (1..=N_BLOCKS).contains(&max_blocks),
        "max_blocks must lie in 1..={N_BLOCKS}"
    );
    let choices = |k: usize| -> u128 { 8 * (4 * (1u128 << k) - 1) };
    let mut ways = vec![0u128; max_blocks + 1];
    ways[0] = 1;
    for _position in 0..max_blocks {
        let mut next = vec![0u128; max_blocks + 1];
        for k in 0..=max_blocks {
            if ways[k] == 0 {
                continue;
            }
            if allow_empty {
                next[k] += ways[k];
            }
            if k + 1 <= max_blocks {
                next[k + 1] += ways[k] * choices(k);
            }
        }
        ways = next;
    }
    ways.iter().skip(1).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    DeepFmLike,
    DlrmLike,
    MlpWarmstart,
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepfm_like" => Ok(PresetName::DeepFmLike),
            "dlrm_like" => Ok(PresetName::DlrmLike),
            "mlp_warmstart" => Ok(PresetName::MlpWarmstart),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PresetName::DeepFmLike => "deepfm_like",
            PresetName::DlrmLike => "dlrm_like",
            PresetName::MlpWarmstart => "mlp_warmstart",
        };
        f.write_str(s)
    }
}

/// Fixed architectures imitating well-known hand-crafted topologies.
///
/// * `deepfm_like` — an FM branch over the raw sparse embeddings next to a
///   two-layer MLP tower over both inputs, merged at the final linear.
/// * `dlrm_like` — a bottom MLP over the dense features, a dot-product
///   block over the sparse embeddings and the bottom output, and a top MLP
///   over both.
/// * `mlp_warmstart` — the 128-1024-128 MLP chain used to pretrain
///   warm-start embeddings.
pub fn preset(name: PresetName) -> Architecture {
    let blocks = match name {
        PresetName::DeepFmLike => vec![
            BlockSpec::fm(RawInput::SparseOnly, &[]),
            BlockSpec::mlp(1024, RawInput::Both, &[]),
            BlockSpec::mlp(1024, RawInput::None, &[2]),
        ],
        PresetName::DlrmLike => vec![
            BlockSpec::mlp(32, RawInput::DenseOnly, &[]),
            BlockSpec::dp(RawInput::SparseOnly, &[1]),
            BlockSpec::mlp(256, RawInput::None, &[1, 2]),
        ],
        PresetName::MlpWarmstart => vec![
            BlockSpec::mlp(128, RawInput::Both, &[]),
            BlockSpec::mlp(1024, RawInput::None, &[1]),
            BlockSpec::mlp(128, RawInput::None, &[2]),
        ],
    };
    let arch = Architecture::from_prefix(blocks).unwrap();
    debug_assert!(validate(&arch).is_empty());
    arch
}

/// One sparse feature: name, full cardinality, and an optional hash cap
/// bounding the effective cardinality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseFieldSpec {
    pub name: String,
    pub cardinality: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_cap: Option<u32>,
}

impl SparseFieldSpec {
    pub fn new(name: impl Into<String>, cardinality: u32) -> Self {
        SparseFieldSpec {
            name: name.into(),
            cardinality,
            hash_cap: None,
        }
    }

    /// Cardinality after any hash cap is applied.
    pub fn effective_cardinality(&self) -> u32 {
        match self.hash_cap {
            Some(cap) => self.cardinality.min(cap),
            None => self.cardinality,
        }
    }
}

/// Shape of the raw input: dense feature count, sparse fields, and the
/// shared embedding width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub n_dense: usize,
    pub sparse_fields: Vec<SparseFieldSpec>,
    pub embedding_dim: usize,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 16;

impl FeatureSpec {
    pub fn new(
        n_dense: usize,
        sparse_fields: Vec<SparseFieldSpec>,
        embedding_dim: usize,
    ) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::InvalidArchitecture(vec![
                "embedding_dim must be at least 1".to_string(),
            ]));
        }
        for f in &sparse_fields {
            if f.cardinality == 0 {
                return Err(Error::InvalidArchitecture(vec![format!(
                    "sparse field {} has zero cardinality",
                    f.name
                )]));
            }
            if let Some(cap) = f.hash_cap {
                if cap == 0 || cap > f.cardinality {
                    return Err(Error::InvalidArchitecture(vec![format!(
                        "sparse field {} has hash cap {cap} outside 1..={}",
                        f.name, f.cardinality
                    )]));
                }
            }
        }
        Ok(FeatureSpec {
            n_dense,
            sparse_fields,
            embedding_dim,
        })
    }

    pub fn n_sparse(&self) -> usize {
        self.sparse_fields.len()
    }

    /// Replaces every field cardinality above `cap` with `cap`.
    pub fn hashed(&self, cap: u32) -> FeatureSpec {
        let mut out = self.clone();
        for f in &mut out.sparse_fields {
            if f.cardinality > cap {
                f.cardinality = cap;
            }
            if let Some(h) = f.hash_cap {
                f.hash_cap = Some(h.min(cap));
            }
        }
        out
    }
}
