use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::ir::{BlockSpec, Kernel, NetworkSpec, Stride};

/// Expansion factor used whenever the expansion is not itself searched.
pub const PINNED_EXPANSION: u32 = 4;

/// An optional depthwise kernel. Serialized as an integer, `0` meaning absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct DwChoice(pub Option<Kernel>);

impl DwChoice {
    pub const NONE: DwChoice = DwChoice(None);
    pub const K3: DwChoice = DwChoice(Some(Kernel::K3));
    pub const K5: DwChoice = DwChoice(Some(Kernel::K5));
}

impl TryFrom<u32> for DwChoice {
    type Error = String;
    fn try_from(k: u32) -> Result<Self, String> {
        if k == 0 {
            Ok(DwChoice(None))
        } else {
            Kernel::new(k).map(|k| DwChoice(Some(k)))
        }
    }
}

impl From<DwChoice> for u32 {
    fn from(d: DwChoice) -> u32 {
        d.0.map_or(0, Kernel::get)
    }
}

fn all_dw() -> Vec<DwChoice> {
    vec![DwChoice::NONE, DwChoice::K3, DwChoice::K5]
}

fn pinned_expansion() -> Vec<u32> {
    vec![PINNED_EXPANSION]
}

/// Choices for one searchable stage. The first block of every stage has
/// stride 2; all of a stage's blocks share one filter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpace {
    pub depths: Vec<u32>,
    pub filters: Vec<u32>,
    #[serde(default = "all_dw")]
    pub start_dw: Vec<DwChoice>,
    #[serde(default = "all_dw")]
    pub mid_dw: Vec<DwChoice>,
    #[serde(default = "pinned_expansion")]
    pub expansions: Vec<u32>,
}

impl StageSpace {
    pub fn max_depth(&self) -> u32 {
        self.depths.iter().copied().max().unwrap_or(0)
    }
}

fn default_stem_out() -> u32 {
    32
}
fn default_fused_expanded() -> u32 {
    128
}
fn default_fused_out() -> u32 {
    48
}
fn default_head() -> [u32; 2] {
    [960, 1280]
}
fn default_classes() -> u32 {
    1000
}
fn default_name() -> String {
    "candidate".into()
}

/// Fixed stem (3x3 s2 conv, 3x3 s2 FusedIB), searchable UIB stages, fixed
/// MobileNetV3-style head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(default = "default_name")]
    pub name: String,
    pub input_res: u32,
    #[serde(default = "default_stem_out")]
    pub stem_out: u32,
    #[serde(default = "default_fused_expanded")]
    pub fused_expanded: u32,
    #[serde(default = "default_fused_out")]
    pub fused_out: u32,
    pub stages: Vec<StageSpace>,
    /// Widths of the pre-pool and post-pool 1x1 convs.
    #[serde(default = "default_head")]
    pub head: [u32; 2],
    #[serde(default = "default_classes")]
    pub num_classes: u32,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SearchError> {
        let empty = |what: &str| Err(SearchError::EmptySpace(what.to_string()));
        if self.stages.is_empty() {
            return empty("no searchable stages");
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.depths.is_empty() || st.depths.contains(&0) {
                return empty(&format!("stage {i}: depths must be non-empty and >= 1"));
            }
            if st.filters.is_empty() || st.filters.contains(&0) {
                return empty(&format!("stage {i}: filters must be non-empty and >= 1"));
            }
            if st.start_dw.is_empty() || st.mid_dw.is_empty() {
                return empty(&format!("stage {i}: depthwise option lists must be non-empty"));
            }
            if st.expansions.is_empty() || st.expansions.contains(&0) {
                return empty(&format!("stage {i}: expansions must be non-empty and >= 1"));
            }
        }
        let widths = [
            self.input_res,
            self.stem_out,
            self.fused_expanded,
            self.fused_out,
            self.num_classes,
        ];
        if widths.contains(&0) || self.head.contains(&0) {
            return Err(SearchError::InvalidConfig(
                "resolution, stem, head and class widths must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Realize an architecture as a network.
    pub fn build(&self, arch: &Arch) -> NetworkSpec {
        let k3 = Kernel::K3;
        let mut blocks = vec![
            BlockSpec::conv(k3, Stride::TWO, self.stem_out),
            BlockSpec::fused_ib(k3, Stride::TWO, self.fused_expanded, self.fused_out),
        ];
        let mut c = self.fused_out;
        for stage in &arch.stages {
            for (i, b) in stage.blocks.iter().enumerate() {
                let stride = if i == 0 { Stride::TWO } else { Stride::ONE };
                blocks.push(BlockSpec::uib(
                    b.start_dw,
                    b.mid_dw,
                    b.expansion * c,
                    stage.filters,
                    stride,
                ));
                c = stage.filters;
            }
        }
        blocks.extend([
            BlockSpec::conv(Kernel::K1, Stride::ONE, self.head[0]),
            BlockSpec::Avgpool,
            BlockSpec::conv(Kernel::K1, Stride::ONE, self.head[1]),
            BlockSpec::Dense {
                out: self.num_classes,
                bias: true,
            },
        ]);
        NetworkSpec::new(self.name.clone(), self.input_res, blocks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockArch {
    pub start_dw: Option<Kernel>,
    pub mid_dw: Option<Kernel>,
    pub expansion: u32,
}

impl BlockArch {
    /// The coarse-stage block: classic IB, 3x3 middle depthwise.
    pub const PINNED_IB: BlockArch = BlockArch {
        start_dw: None,
        mid_dw: Some(Kernel::K3),
        expansion: PINNED_EXPANSION,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageArch {
    pub filters: u32,
    pub blocks: Vec<BlockArch>,
}

impl StageArch {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

/// One concrete point of a [`SearchSpace`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub stages: Vec<StageArch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Depth,
    Filter,
    Start(usize),
    Mid(usize),
    Expansion(usize),
}

#[derive(Debug, Clone, Copy)]
struct Gene {
    stage: usize,
    role: Role,
    card: usize,
}

/// Which part of the space a search phase explores.
#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    /// Depths and filters, every block pinned to IB.
    Coarse,
    /// Depthwise options of every block, depths and filters frozen.
    Fine { frozen: Arch },
    /// Expansion factors of every block, everything else frozen.
    Expansion { frozen: Arch },
    /// Everything at once.
    Joint,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Fine { .. } => "fine",
            Phase::Expansion { .. } => "expansion",
            Phase::Joint => "one-stage",
        }
    }
}

/// Integer-vector encoding of the architectures reachable in one phase.
///
/// Each gene indexes into a choice list. In the joint phase the genes of
/// blocks beyond a stage's chosen depth are inactive and held at zero.
pub(crate) struct Encoding<'a> {
    space: &'a SearchSpace,
    phase: Phase,
    genes: Vec<Gene>,
    /// Index of each stage's depth gene (joint phase only).
    depth_gene: Vec<Option<usize>>,
}

impl<'a> Encoding<'a> {
    pub fn new(space: &'a SearchSpace, phase: Phase) -> Self {
        let mut genes = Vec::new();
        let mut depth_gene = vec![None; space.stages.len()];
        for (s, st) in space.stages.iter().enumerate() {
            let push = |genes: &mut Vec<Gene>, role, card| genes.push(Gene { stage: s, role, card });
            match &phase {
                Phase::Coarse => {
                    push(&mut genes, Role::Depth, st.depths.len());
                    push(&mut genes, Role::Filter, st.filters.len());
                }
                Phase::Fine { frozen } => {
                    for b in 0..frozen.stages[s].depth() {
                        push(&mut genes, Role::Start(b), st.start_dw.len());
                        push(&mut genes, Role::Mid(b), st.mid_dw.len());
                    }
                }
                Phase::Expansion { frozen } => {
                    for b in 0..frozen.stages[s].depth() {
                        push(&mut genes, Role::Expansion(b), st.expansions.len());
                    }
                }
                Phase::Joint => {
                    depth_gene[s] = Some(genes.len());
                    push(&mut genes, Role::Depth, st.depths.len());
                    push(&mut genes, Role::Filter, st.filters.len());
                    for b in 0..st.max_depth() as usize {
                        push(&mut genes, Role::Start(b), st.start_dw.len());
                        push(&mut genes, Role::Mid(b), st.mid_dw.len());
                        push(&mut genes, Role::Expansion(b), st.expansions.len());
                    }
                }
            }
        }
        Self {
            space,
            phase,
            genes,
            depth_gene,
        }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.genes[i].card
    }

    /// Whether gene `i` affects the architecture. Depends only on `genes[..i]`.
    pub fn is_active(&self, genes: &[usize], i: usize) -> bool {
        let g = self.genes[i];
        match (g.role, self.depth_gene[g.stage]) {
            (Role::Start(b) | Role::Mid(b) | Role::Expansion(b), Some(d)) => {
                b < self.space.stages[g.stage].depths[genes[d]] as usize
            }
            _ => true,
        }
    }

    pub fn canonicalize(&self, genes: &mut [usize]) {
        for i in 0..genes.len() {
            if !self.is_active(genes, i) {
                genes[i] = 0;
            }
        }
    }

    /// Number of distinct architectures, saturating.
    pub fn size(&self) -> u128 {
        let sp = &self.space.stages;
        match &self.phase {
            Phase::Coarse => sp.iter().fold(1u128, |acc, st| {
                acc.saturating_mul((st.depths.len() * st.filters.len()) as u128)
            }),
            Phase::Fine { .. } | Phase::Expansion { .. } => self
                .genes
                .iter()
                .fold(1u128, |acc, g| acc.saturating_mul(g.card as u128)),
            Phase::Joint => sp.iter().fold(1u128, |acc, st| {
                let per_block = (st.start_dw.len() * st.mid_dw.len() * st.expansions.len()) as u128;
                let stage: u128 = st
                    .depths
                    .iter()
                    .map(|&d| (0..d).fold(st.filters.len() as u128, |a, _| a.saturating_mul(per_block)))
                    .fold(0u128, |a, b| a.saturating_add(b));
                acc.saturating_mul(stage)
            }),
        }
    }

    /// All canonical gene vectors in lexicographic order.
    pub fn enumerate(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(self.len());
        self.dfs(&mut cur, &mut out);
        out
    }

    fn dfs(&self, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let i = cur.len();
        if i == self.len() {
            out.push(cur.clone());
            return;
        }
        let n = if self.is_active(cur, i) { self.genes[i].card } else { 1 };
        for v in 0..n {
            cur.push(v);
            self.dfs(cur, out);
            cur.pop();
        }
    }

    pub fn decode(&self, genes: &[usize]) -> Arch {
        let mut stages: Vec<StageArch> = match &self.phase {
            Phase::Fine { frozen } | Phase::Expansion { frozen } => frozen.stages.clone(),
            Phase::Coarse | Phase::Joint => self
                .space
                .stages
                .iter()
                .map(|_| StageArch {
                    filters: 0,
                    blocks: Vec::new(),
                })
                .collect(),
        };
        for (i, g) in self.genes.iter().enumerate() {
            let st = &self.space.stages[g.stage];
            let v = genes[i];
            let arch = &mut stages[g.stage];
            match g.role {
                Role::Depth => {
                    let fill = match self.phase {
                        Phase::Coarse => BlockArch::PINNED_IB,
                        _ => BlockArch {
                            start_dw: st.start_dw[0].0,
                            mid_dw: st.mid_dw[0].0,
                            expansion: st.expansions[0],
                        },
                    };
                    arch.blocks = vec![fill; st.depths[v] as usize];
                }
                Role::Filter => arch.filters = st.filters[v],
                Role::Start(b) | Role::Mid(b) | Role::Expansion(b) if b >= arch.blocks.len() => {}
                Role::Start(b) => arch.blocks[b].start_dw = st.start_dw[v].0,
                Role::Mid(b) => arch.blocks[b].mid_dw = st.mid_dw[v].0,
                Role::Expansion(b) => arch.blocks[b].expansion = st.expansions[v],
            }
        }
        Arch { stages }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::propagate_shapes;

    fn toy_space() -> SearchSpace {
        let stage = StageSpace {
            depths: vec![1, 2],
            filters: vec![16, 24, 32],
            start_dw: vec![DwChoice::NONE, DwChoice::K3],
            mid_dw: vec![DwChoice::NONE, DwChoice::K3],
            expansions: vec![4],
        };
        SearchSpace {
            name: "toy".into(),
            input_res: 32,
            stem_out: 8,
            fused_expanded: 16,
            fused_out: 8,
            stages: vec![stage.clone(), stage],
            head: [32, 64],
            num_classes: 10,
        }
    }

    #[test]
    fn joint_size_matches_enumeration() {
        let space = toy_space();
        let enc = Encoding::new(&space, Phase::Joint);
        // per stage: 3 filters * (4 + 4^2) block choices = 60; two stages
        assert_eq!(enc.size(), 3600);
        let all = enc.enumerate();
        assert_eq!(all.len(), 3600);
        let archs: std::collections::HashSet<Arch> = all.iter().map(|g| enc.decode(g)).collect();
        assert_eq!(archs.len(), 3600);
        for g in all.iter().step_by(97) {
            propagate_shapes(&space.build(&enc.decode(g))).unwrap();
        }
    }

    #[test]
    fn coarse_pins_ib() {
        let space = toy_space();
        let enc = Encoding::new(&space, Phase::Coarse);
        assert_eq!(enc.size(), 36);
        for g in enc.enumerate() {
            let arch = enc.decode(&g);
            assert!(arch
                .stages
                .iter()
                .flat_map(|s| &s.blocks)
                .all(|b| *b == BlockArch::PINNED_IB));
        }
    }

    #[test]
    fn fine_keeps_frozen_depth_and_filters() {
        let space = toy_space();
        let frozen = Encoding::new(&space, Phase::Coarse).decode(&[1, 2, 0, 1]);
        let enc = Encoding::new(&space, Phase::Fine { frozen: frozen.clone() });
        // 3 active blocks, 4 options each
        assert_eq!(enc.size(), 64);
        for g in enc.enumerate() {
            let a = enc.decode(&g);
            for (x, y) in a.stages.iter().zip(&frozen.stages) {
                assert_eq!((x.filters, x.depth()), (y.filters, y.depth()));
                assert!(x.blocks.iter().all(|b| b.expansion == PINNED_EXPANSION));
            }
        }
    }

    #[test]
    fn dw_choice_serde() {
        let v: Vec<DwChoice> = serde_json::from_str("[0, 3, 5]").unwrap();
        assert_eq!(v, all_dw());
        assert!(serde_json::from_str::<DwChoice>("4").is_err());
    }
}
