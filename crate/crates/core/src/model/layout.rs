use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Ones,
    Zeros,
}

/// One named parameter array inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub(crate) init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one encoder layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where every parameter lives in the flat vector. Fully determined by the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    total: usize,
    pub token_embedding: usize,
    pub position_embedding: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_gain: usize,
    pub final_bias: usize,
    pub head_weight: usize,
    pub head_bias: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.feedforward_dim;
        let mut specs: Vec<ParamSpec> = Vec::new();
        let mut total = 0usize;
        let mut add = |name: String, shape: Vec<usize>, init: Init| -> usize {
            let offset = total;
            total += shape.iter().product::<usize>();
            specs.push(ParamSpec {
                name,
                shape,
                offset,
                init,
            });
            offset
        };
        let token_embedding = add("embed.token".into(), vec![cfg.vocab_size, d], Init::Normal);
        let position_embedding = add("embed.position".into(), vec![cfg.pad_len, d], Init::Normal);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let mut p = |s: &str, shape: Vec<usize>, init| add(format!("layer{l}.{s}"), shape, init);
            layers.push(LayerOffsets {
                ln1_gain: p("ln1.gain", vec![d], Init::Ones),
                ln1_bias: p("ln1.bias", vec![d], Init::Zeros),
                wq: p("attn.wq", vec![d, d], Init::Normal),
                bq: p("attn.bq", vec![d], Init::Zeros),
                wk: p("attn.wk", vec![d, d], Init::Normal),
                bk: p("attn.bk", vec![d], Init::Zeros),
                wv: p("attn.wv", vec![d, d], Init::Normal),
                bv: p("attn.bv", vec![d], Init::Zeros),
                wo: p("attn.wo", vec![d, d], Init::Normal),
                bo: p("attn.bo", vec![d], Init::Zeros),
                ln2_gain: p("ln2.gain", vec![d], Init::Ones),
                ln2_bias: p("ln2.bias", vec![d], Init::Zeros),
                w1: p("ffn.w1", vec![d, f], Init::Normal),
                b1: p("ffn.b1", vec![f], Init::Zeros),
                w2: p("ffn.w2", vec![f, d], Init::Normal),
                b2: p("ffn.b2", vec![d], Init::Zeros),
            });
        }
        let final_gain = add("final_ln.gain".into(), vec![d], Init::Ones);
        let final_bias = add("final_ln.bias".into(), vec![d], Init::Zeros);
        let head_weight = add("head.weight".into(), vec![d, cfg.num_relations], Init::Normal);
        let head_bias = add("head.bias".into(), vec![cfg.num_relations], Init::Zeros);
        Self {
            specs,
            total,
            token_embedding,
            position_embedding,
            layers,
            final_gain,
            final_bias,
            head_weight,
            head_bias,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
