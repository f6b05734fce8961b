"""Regressors, naive baselines and the artifact container."""
from .artifact import (ModelArtifact, load_artifact, save_artifact, train_artifact,
                       MODEL_KINDS)
from .mlp import (FFNNRegressor, MlpParams, MlpTrainConfig, TrainResult, init_mlp,
                  mlp_forward, mlp_gradient, mlp_loss, mlp_train, split_neurons)
from .naive import (naive_random_walk, naive_seasonal, random_walk_matrix,
                    seasonal_naive_matrix)
from .tree import (RandomForestRegressor, RegressionTree, forest_fit, forest_predict,
                   tree_fit, tree_predict)
