//! Building blocks recorded on a [`Graph`]: item embedding, exposure
//! attention, projection enhancement and interest pooling.

use crate::diffcore::{mlp3_forward, Graph, Mlp3, ParamId, Var};
use crate::feedlog::ItemRecord;
use crate::stm::ExposureContext;
use crate::{Error, Result};

/// Embedding tables: item ids and category ids map to rows of width `d`;
/// dense features go through a `[d, d_f]` linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub item_table: ParamId,
    pub category_table: ParamId,
    pub dense_proj: Option<ParamId>,
    pub num_items: usize,
    pub num_categories: usize,
    pub d: usize,
}

impl EmbeddingTables {
    /// Width of an item representation: `2d`, or `3d` with dense features.
    pub fn repr_dim(&self) -> usize {
        if self.dense_proj.is_some() {
            3 * self.d
        } else {
            2 * self.d
        }
    }
}

/// How an attention scorer sees a (query, key) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringInput {
    /// `[q, k, q - k, q * k]`.
    #[default]
    Interaction,
    /// `[q, k]`.
    Concat,
}

impl ScoringInput {
    pub fn input_dim(self, repr_dim: usize) -> usize {
        match self {
            ScoringInput::Interaction => 4 * repr_dim,
            ScoringInput::Concat => 2 * repr_dim,
        }
    }

    fn features(self, graph: &mut Graph<'_>, q: Var, k: Var) -> Result<Var> {
        match self {
            ScoringInput::Interaction => graph.interaction_features(q, k),
            ScoringInput::Concat => Ok(graph.concat(&[q, k])),
        }
    }
}

fn in_range(id: u64, size: usize) -> bool {
    usize::try_from(id).is_ok_and(|i| i < size)
}

/// `item_row ++ category_row (++ E_f * dense_feature)`.
pub fn embed_item(graph: &mut Graph<'_>, tables: &EmbeddingTables, item: &ItemRecord) -> Result<Var> {
    if !in_range(item.item_id, tables.num_items) {
        return Err(Error::Vocabulary {
            table: "item",
            id: item.item_id,
            size: tables.num_items,
        });
    }
    if !in_range(item.category_id, tables.num_categories) {
        return Err(Error::Vocabulary {
            table: "category",
            id: item.category_id,
            size: tables.num_categories,
        });
    }
    let item_row = graph.row(tables.item_table, item.item_id as usize)?;
    let cat_row = graph.row(tables.category_table, item.category_id as usize)?;
    match (tables.dense_proj, &item.dense_feature) {
        (None, _) => Ok(graph.concat(&[item_row, cat_row])),
        (Some(proj), Some(feat)) => {
            let x = graph.constant(feat.clone());
            let dense = graph.linear(proj, None, x)?;
            Ok(graph.concat(&[item_row, cat_row, dense]))
        }
        (Some(_), None) => Err(Error::Schema(format!(
            "item {} has no dense feature but the model expects one",
            item.item_id
        ))),
    }
}

/// Attention-weighted sum of a click's exposure context, with the click as
/// query. An empty context yields the zero vector.
pub fn extract_exposure_info(
    graph: &mut Graph<'_>,
    e_clk: Var,
    context_embeddings: &[Var],
    scorer: &Mlp3,
) -> Result<Var> {
    if context_embeddings.is_empty() {
        let d = graph.dim(e_clk);
        return Ok(graph.zeros(d));
    }
    let mut logits = Vec::with_capacity(context_embeddings.len());
    for &e_unclk in context_embeddings {
        let f = graph.interaction_features(e_clk, e_unclk)?;
        logits.push(mlp3_forward(graph, scorer, f)?);
    }
    let logits = graph.stack(&logits)?;
    let weights = graph.masked_softmax(logits, &vec![true; context_embeddings.len()])?;
    graph.weighted_sum(weights, context_embeddings)
}

/// Embed the valid items of a context, in slot order.
pub fn embed_context(
    graph: &mut Graph<'_>,
    tables: &EmbeddingTables,
    context: &ExposureContext,
    cache: &mut EmbedCache,
) -> Result<Vec<Var>> {
    context.items.iter().map(|it| cache.embed(graph, tables, it)).collect()
}

/// `e_clk + project(e_clk, c)`. Also returns the enhancement itself.
pub fn enhance_click(graph: &mut Graph<'_>, e_clk: Var, c: Var) -> Result<(Var, Var)> {
    let e_enh = graph.project(e_clk, c)?;
    let star = graph.add(e_clk, e_enh)?;
    Ok((star, e_enh))
}

/// Target attention: score every valid position against the target with
/// `scorer`, softmax over the valid positions, and pool. A fully masked
/// sequence pools to zero.
pub fn target_attention(
    graph: &mut Graph<'_>,
    e_tgt: Var,
    sequence: &[Var],
    mask: &[bool],
    scorer: &Mlp3,
    scoring: ScoringInput,
) -> Result<Var> {
    if sequence.len() != mask.len() {
        return Err(Error::Shape(format!(
            "sequence of {} items with a mask of {}",
            sequence.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        let d = graph.dim(e_tgt);
        return Ok(graph.zeros(d));
    }
    let mut logits = Vec::with_capacity(sequence.len());
    for (&item, &valid) in sequence.iter().zip(mask) {
        if valid {
            let f = scoring.features(graph, e_tgt, item)?;
            logits.push(mlp3_forward(graph, scorer, f)?);
        } else {
            logits.push(graph.constant(vec![0.0]));
        }
    }
    let logits = graph.stack(&logits)?;
    let weights = graph.masked_softmax(logits, mask)?;
    graph.weighted_sum(weights, sequence)
}

/// Mean of the valid positions; zero when none are valid.
pub fn average_pool(graph: &mut Graph<'_>, sequence: &[Var], mask: &[bool], dim: usize) -> Result<Var> {
    let valid: Vec<Var> = sequence
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    if valid.is_empty() {
        return Ok(graph.zeros(dim));
    }
    graph.mean(&valid)
}

/// Reuses the embedding node of an item seen earlier in the same graph.
#[derive(Debug, Default)]
pub struct EmbedCache {
    seen: std::collections::HashMap<(u64, u64), Var>,
}

impl EmbedCache {
    pub fn embed(&mut self, graph: &mut Graph<'_>, tables: &EmbeddingTables, item: &ItemRecord) -> Result<Var> {
        // Dense features are per impression, so only id-only items are shared.
        if item.dense_feature.is_some() {
            return embed_item(graph, tables, item);
        }
        let key = (item.item_id, item.category_id);
        if let Some(&v) = self.seen.get(&key) {
            return Ok(v);
        }
        let v = embed_item(graph, tables, item)?;
        self.seen.insert(key, v);
        Ok(v)
    }
}
