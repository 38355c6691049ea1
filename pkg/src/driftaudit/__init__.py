"""driftaudit: monitor deployed classifiers for data drift using only predicted
labels and confidences."""

__version__ = "0.1.0"
