//! Shared fixtures for the CLI integration and acceptance suites: a tiny
//! synthetic PPM corpus and a hand-wired network that classifies it with
//! near-one confidence.

use std::path::Path;
use std::process::{Command, Output};

use agenet::model::{io as weights_io, ModelConfig, Network};
use agenet::rng::Rng;
use agenet::tensor::{Shape, Tensor};

pub fn agenet_cmd(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agenet"));
    cmd.current_dir(dir);
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    agenet_cmd(dir).args(args).output().expect("failed to launch the agenet binary")
}

pub fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} exited with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

pub fn stdout_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a binary PPM whose pixel (x, y) is produced by `f`.
pub fn write_ppm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> [u8; 3]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.extend_from_slice(&f(x, y));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

pub const PERFECT_SIDE: usize = 4;

/// (red byte, class index, an age inside that class's bin) rows the perfect
/// predictor is wired for. The red channel alone identifies the class; the
/// ages were chosen so each class's bin midpoint also lands inside the
/// gapped evaluation scheme's bin for that age.
pub const PERFECT_CLASSES: [(u8, usize, u32); 4] = [
    (10, 0, 1),   // bin 0-2, midpoint 1.0
    (60, 1, 5),   // bin 3-6, midpoint 4.5
    (110, 4, 18), // bin 18-22, midpoint 20.0
    (160, 6, 30), // bin 27-33, midpoint 30.0
];

fn shape(dims: &[usize]) -> Shape {
    Shape::new(dims.to_vec()).unwrap()
}

/// Builds a network that classifies the constant-color images above with
/// probability 1 up to f64 rounding. A 1x1 conv copies the red channel
/// through, the hidden dense layer forms one piecewise-linear hat function
/// per class (three ReLU units: ReLU(a*d+1) - 2*ReLU(a*d) + ReLU(a*d-1) is
/// 1 at d = 0 and 0 beyond |d| = 1/a), and the output layer scales each hat
/// into a huge one-hot logit.
pub fn perfect_net() -> Network<f64> {
    let classes = PERFECT_CLASSES.len();
    let hidden = 3 * classes;
    let flat = PERFECT_SIDE * PERFECT_SIDE;
    let config = ModelConfig {
        input_shape: (3, PERFECT_SIDE, PERFECT_SIDE),
        conv_filters: vec![1],
        conv_kernel_size: 1,
        conv_strides: vec![1],
        pool_layers: Default::default(),
        dropout_layers: Default::default(),
        dropout_rate: 0.187,
        dense_units: vec![hidden, 10],
    };
    let mut net = Network::build(config, &mut Rng::new(0)).unwrap();

    // Hat half-width 1/20 in red units; the classes sit >= 0.19 apart.
    let sharp = 20.0;
    // Logit margin; the softmax leak exp(-200) vanishes under f64 rounding.
    let peak = 200.0;

    let mut conv_kernels = Tensor::zeros(shape(&[1, 3, 1, 1]));
    conv_kernels.data_mut()[0] = 1.0;
    let conv_bias = Tensor::zeros(shape(&[1]));
    let mut w1 = Tensor::zeros(shape(&[flat, hidden]));
    let mut b1 = Tensor::zeros(shape(&[hidden]));
    let mut w2 = Tensor::zeros(shape(&[hidden, 10]));
    let b2 = Tensor::zeros(shape(&[10]));

    for (j, &(red, class, _)) in PERFECT_CLASSES.iter().enumerate() {
        let r = red as f64 / 255.0;
        for (t, offset) in [(3 * j, 1.0), (3 * j + 1, 0.0), (3 * j + 2, -1.0)] {
            // Pre-activation sharp*(mean red - r) + offset; the flattened
            // conv output holds the red value at every position, so
            // averaging the row recovers it.
            for i in 0..flat {
                w1.data_mut()[i * hidden + t] = sharp / flat as f64;
            }
            b1.data_mut()[t] = -sharp * r + offset;
        }
        w2.data_mut()[(3 * j) * 10 + class] = peak;
        w2.data_mut()[(3 * j + 1) * 10 + class] = -2.0 * peak;
        w2.data_mut()[(3 * j + 2) * 10 + class] = peak;
    }

    let sources = [conv_kernels, conv_bias, w1, b1, w2, b2];
    let mut params = net.params_mut();
    assert_eq!(params.len(), sources.len(), "unexpected parameter layout");
    for (dst, src) in params.iter_mut().zip(&sources) {
        assert_eq!(dst.dims(), src.dims(), "parameter shape drifted");
        dst.data_mut().copy_from_slice(src.data());
    }
    net
}

pub fn save_net(net: &Network<f64>, path: &Path) {
    weights_io::save(net, path).unwrap();
}

/// Writes one constant-color class image and returns its file name.
pub fn write_class_image(dir: &Path, name: &str, red: u8) {
    write_ppm(&dir.join(name), PERFECT_SIDE, PERFECT_SIDE, |_, _| [red, 40, 40]);
}
