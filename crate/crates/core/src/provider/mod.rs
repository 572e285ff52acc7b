//! The model abstraction: `(images, prompt, prefix) -> next-token logits`.

mod remote;
pub mod stub;
mod synthetic;
pub mod wire;

use std::collections::HashMap;
use std::sync::Arc;

pub use remote::{RemoteConfig, RemoteProvider};
pub use synthetic::{
    contaminated_features, contaminated_features_gated, cosine_similarity, image_features,
    signal_clarity, FeatureVector, SyntheticModel, SyntheticModelConfig, OPTION_LETTERS,
    STOP_TOKEN_NAME,
};

use crate::error::{Error, Result};
use crate::types::{ImageContext, ImageTensor, LogitVector, TokenId};

/// Conditioning for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderRequest {
    context: ImageContext,
    prompt: String,
    prefix_tokens: Vec<TokenId>,
}

impl ProviderRequest {
    pub fn new(context: ImageContext, prompt: impl Into<String>, prefix_tokens: Vec<TokenId>) -> Result<Self> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(Error::InvalidArgument("prompt must be non-empty".into()));
        }
        let channels = context.slots()[0].channels();
        if context.slots().iter().any(|img| img.channels() != channels) {
            return Err(Error::InvalidArgument(
                "all images in a request must have the same channel count".into(),
            ));
        }
        Ok(Self {
            context,
            prompt,
            prefix_tokens,
        })
    }

    pub fn context(&self) -> &ImageContext {
        &self.context
    }

    pub fn images(&self) -> &[Arc<ImageTensor>] {
        self.context.slots()
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn prefix_tokens(&self) -> &[TokenId] {
        &self.prefix_tokens
    }
}

/// A next-token logit function. Implementations must be safe to call from
/// several threads at once: a focused step issues its passes concurrently.
pub trait LogitProvider: Send + Sync {
    fn next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector>;

    /// Vocabulary names, when the provider knows them.
    fn vocabulary(&self) -> Option<&Vocabulary> {
        None
    }

    /// Token that ends generation, if any.
    fn stop_token(&self) -> Option<TokenId> {
        None
    }

    /// Short description echoed into run manifests.
    fn describe(&self) -> serde_json::Value;
}

impl<P: LogitProvider + ?Sized> LogitProvider for Arc<P> {
    fn next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        (**self).next_token_logits(request)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }

    fn stop_token(&self) -> Option<TokenId> {
        (**self).stop_token()
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for Box<P> {
    fn next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        (**self).next_token_logits(request)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        (**self).vocabulary()
    }

    fn stop_token(&self) -> Option<TokenId> {
        (**self).stop_token()
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

/// Token names with reverse lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token name `{name}`")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.index.get(name).copied()
    }

    /// Whitespace-separated token names to ids.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.name(t).map(str::to_string).unwrap_or_else(|| format!("<{t}>")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let gray = Arc::new(ImageTensor::filled(2, 2, 1, 0.5).unwrap());
        let rgb = Arc::new(ImageTensor::filled(2, 2, 3, 0.5).unwrap());
        let ctx = ImageContext::clean(std::slice::from_ref(&gray)).unwrap();
        assert!(ProviderRequest::new(ctx.clone(), "  ", vec![]).is_err());
        assert!(ProviderRequest::new(ctx, "image 1", vec![]).is_ok());
        let mixed = ImageContext::clean(&[gray, rgb]).unwrap();
        assert!(ProviderRequest::new(mixed, "image 1", vec![]).is_err());
    }

    #[test]
    fn vocabulary_lookup() {
        let v = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(v.tokenize("b a b").unwrap(), vec![1, 0, 1]);
        assert!(matches!(v.tokenize("c"), Err(Error::UnknownToken(_))));
        assert_eq!(v.detokenize(&[0, 7]), "a <7>");
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }
}
