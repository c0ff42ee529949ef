//! GRU and bidirectional LSTM sequence encoders built on [`Tape`] cells.

use rand::Rng;

use super::tape::{GateIds, GruIds, LstmIds, Tape, Var};
use super::{ParamStore, Tensor};
use crate::{Error, Result};

/// Both directions of a bidirectional LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmIds {
    pub forward: LstmIds,
    pub backward: LstmIds,
}

fn init_gate<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    gate: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<GateIds> {
    // PyTorch-style: every tensor of the cell uses fan-in = hidden size.
    Ok(GateIds {
        input: store.add_uniform(format!("{prefix}.W_{gate}"), &[hidden, input], hidden, rng)?,
        recurrent: store.add_uniform(format!("{prefix}.U_{gate}"), &[hidden, hidden], hidden, rng)?,
        bias: store.add_uniform(format!("{prefix}.b_{gate}"), &[hidden], hidden, rng)?,
    })
}

pub fn init_gru<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<GruIds> {
    Ok(GruIds {
        update: init_gate(store, prefix, "z", input, hidden, rng)?,
        reset: init_gate(store, prefix, "r", input, hidden, rng)?,
        candidate: init_gate(store, prefix, "n", input, hidden, rng)?,
    })
}

pub fn init_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<LstmIds> {
    Ok(LstmIds {
        input: init_gate(store, prefix, "i", input, hidden, rng)?,
        forget: init_gate(store, prefix, "f", input, hidden, rng)?,
        output: init_gate(store, prefix, "o", input, hidden, rng)?,
        candidate: init_gate(store, prefix, "g", input, hidden, rng)?,
    })
}

pub fn init_bilstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<BiLstmIds> {
    Ok(BiLstmIds {
        forward: init_lstm(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
        backward: init_lstm(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
    })
}

pub fn gru_hidden_size(params: &ParamStore, ids: &GruIds) -> usize {
    params.get(ids.update.bias).len()
}

fn lstm_hidden_size(params: &ParamStore, ids: &LstmIds) -> usize {
    params.get(ids.input.bias).len()
}

/// Runs a GRU from a zero state over `inputs` and returns the last hidden
/// state. `None` entries are zero inputs (absent calendar units).
pub fn gru_sequence_masked(tape: &mut Tape<'_>, inputs: &[Option<Var>], ids: &GruIds) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::EmptyAggregation("gru_sequence"));
    }
    let hidden = gru_hidden_size(tape.params(), ids);
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    for &x in inputs {
        h = tape.gru_cell(x, h, ids)?;
    }
    Ok(h)
}

/// Runs a GRU from a zero state over `inputs` and returns the last hidden state.
pub fn gru_sequence(tape: &mut Tape<'_>, inputs: &[Var], ids: &GruIds) -> Result<Var> {
    let masked: Vec<Option<Var>> = inputs.iter().copied().map(Some).collect();
    gru_sequence_masked(tape, &masked, ids)
}

fn lstm_last_hidden(tape: &mut Tape<'_>, tokens: impl Iterator<Item = Var>, ids: &LstmIds) -> Result<Var> {
    let hidden = lstm_hidden_size(tape.params(), ids);
    let mut state = tape.constant(Tensor::zeros(&[2 * hidden]));
    for x in tokens {
        state = tape.lstm_cell(x, state, ids)?;
    }
    tape.slice(state, 0, hidden)
}

/// Concatenation of the forward direction's final hidden state and the
/// backward direction's final hidden state (after reading token 0).
pub fn bilstm_encode(tape: &mut Tape<'_>, tokens: &[Var], ids: &BiLstmIds) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Empty("bilstm_encode"));
    }
    let fwd = lstm_last_hidden(tape, tokens.iter().copied(), &ids.forward)?;
    let bwd = lstm_last_hidden(tape, tokens.iter().rev().copied(), &ids.backward)?;
    tape.concat(&[fwd, bwd], 0)
}
