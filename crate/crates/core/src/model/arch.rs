use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, MaxPool2d};

/// One entry of a network's layer stack, as written in checkpoint
/// descriptors.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        pool: (usize, usize),
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten {
        features: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "conv in={in_channels} out={out_channels} kernel={}x{} stride={stride} pad={padding}",
                kernel.0, kernel.1
            ),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool { pool, stride } => {
                write!(f, "maxpool pool={}x{} stride={stride}", pool.0, pool.1)
            }
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate}"),
            LayerSpec::Flatten { features } => write!(f, "flatten features={features}"),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => write!(f, "dense in={in_features} out={out_features}"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

fn bad(line: &str) -> Error {
    Error::Format(format!("unparseable layer line {line:?}"))
}

fn field<'a>(parts: &[&'a str], key: &str, line: &str) -> Result<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| bad(line))
}

fn num<T: FromStr>(s: &str, line: &str) -> Result<T> {
    s.parse().map_err(|_| bad(line))
}

fn pair(s: &str, line: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('x').ok_or_else(|| bad(line))?;
    Ok((num(a, line)?, num(b, line)?))
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let get = |k| field(&parts, k, line);
        let spec = match parts.first().copied() {
            Some("conv") => LayerSpec::Conv {
                in_channels: num(get("in")?, line)?,
                out_channels: num(get("out")?, line)?,
                kernel: pair(get("kernel")?, line)?,
                stride: num(get("stride")?, line)?,
                padding: num(get("pad")?, line)?,
            },
            Some("relu") => LayerSpec::Relu,
            Some("maxpool") => LayerSpec::MaxPool {
                pool: pair(get("pool")?, line)?,
                stride: num(get("stride")?, line)?,
            },
            Some("dropout") => LayerSpec::Dropout {
                rate: num(get("rate")?, line)?,
            },
            Some("flatten") => LayerSpec::Flatten {
                features: num(get("features")?, line)?,
            },
            Some("dense") => LayerSpec::Dense {
                in_features: num(get("in")?, line)?,
                out_features: num(get("out")?, line)?,
            },
            Some("softmax") => LayerSpec::Softmax,
            _ => return Err(bad(line)),
        };
        Ok(spec)
    }
}

/// Convolution block settings: filters, kernel side, stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// High-level description of the conv/pool/dropout stack followed by dense
/// layers. [`Architecture::layers`] expands it into concrete layer specs,
/// deriving the flatten width from the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub convs: Vec<ConvBlock>,
    pub padding: usize,
    /// `(pool_h, pool_w, stride)`
    pub pool: (usize, usize, usize),
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl Architecture {
    /// Three 3x3 conv blocks (32 filters stride 1, 64 stride 2, 64 stride 1),
    /// each followed by ReLU, 2x2 max pooling at stride 1 and 0.2 dropout;
    /// then a 64-unit ReLU dense layer and a softmax output.
    pub fn wbc(n_classes: usize) -> Self {
        Architecture {
            input: [3, 100, 100],
            convs: vec![
                ConvBlock {
                    filters: 32,
                    kernel: 3,
                    stride: 1,
                },
                ConvBlock {
                    filters: 64,
                    kernel: 3,
                    stride: 2,
                },
                ConvBlock {
                    filters: 64,
                    kernel: 3,
                    stride: 1,
                },
            ],
            padding: 0,
            pool: (2, 2, 1),
            dropout: 0.2,
            hidden: vec![64],
            n_classes,
        }
    }

    pub fn with_input(mut self, input: [usize; 3]) -> Self {
        self.input = input;
        self
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.n_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        let [mut c, mut h, mut w] = self.input;
        let mut out = Vec::new();
        for block in &self.convs {
            let conv = Conv2d::<f32>::new(
                c,
                block.filters,
                (block.kernel, block.kernel),
                block.stride,
                self.padding,
            )?;
            (h, w) = conv.output_hw(h, w)?;
            out.push(LayerSpec::Conv {
                in_channels: c,
                out_channels: block.filters,
                kernel: (block.kernel, block.kernel),
                stride: block.stride,
                padding: self.padding,
            });
            c = block.filters;
            out.push(LayerSpec::Relu);
            let (ph, pw, ps) = self.pool;
            (h, w) = MaxPool2d::new(ph, pw, ps)?.output_hw(h, w)?;
            out.push(LayerSpec::MaxPool {
                pool: (ph, pw),
                stride: ps,
            });
            out.push(LayerSpec::Dropout { rate: self.dropout });
        }
        let mut features = c * h * w;
        out.push(LayerSpec::Flatten { features });
        for &units in &self.hidden {
            out.push(LayerSpec::Dense {
                in_features: features,
                out_features: units,
            });
            out.push(LayerSpec::Relu);
            features = units;
        }
        out.push(LayerSpec::Dense {
            in_features: features,
            out_features: self.n_classes,
        });
        out.push(LayerSpec::Softmax);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wbc_geometry() {
        let layers = Architecture::wbc(4).layers().unwrap();
        // 100 -conv-> 98 -pool-> 97 -conv/2-> 48 -pool-> 47 -conv-> 45 -pool-> 44
        assert!(layers.contains(&LayerSpec::Flatten { features: 64 * 44 * 44 }));
        assert_eq!(layers.last(), Some(&LayerSpec::Softmax));
        assert_eq!(layers.len(), 4 * 3 + 1 + 2 + 2);
    }

    #[test]
    fn too_few_classes() {
        assert!(Architecture::wbc(1).layers().is_err());
    }

    #[test]
    fn lines_roundtrip() {
        for spec in Architecture::wbc(4).layers().unwrap() {
            assert_eq!(spec.to_string().parse::<LayerSpec>().unwrap(), spec);
        }
        assert!("conv in=3".parse::<LayerSpec>().is_err());
        assert!("lstm".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn small_input_fails_geometry() {
        let arch = Architecture::wbc(4).with_input([3, 12, 12]);
        assert!(matches!(arch.layers(), Err(Error::InvalidGeometry(_))));
        assert!(Architecture::wbc(4).with_input([3, 14, 14]).layers().is_ok());
    }
}
