# Sentiment-Enhanced Trend Forecaster Package
__version__ = "1.0.0"
__author__ = "Your Name"
__description__ = "Forecast quarterly financial trends from sentiment-enhanced time series with an LSTM"
